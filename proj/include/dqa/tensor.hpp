#pragma once

#include <Eigen/Dense>
#include <string>

#include "dqa/errors.hpp"

namespace dqa {

// One layer's activations, one column per channel. Every channel has the
// same length (rows), which is the element count the quantizer and the
// shifting-error stream agree on.
struct ActivationTensor {
  std::string layer_id;
  Eigen::MatrixXf values;  // channel_len x channel_count

  int channel_count() const { return static_cast<int>(values.cols()); }
  int channel_len() const { return static_cast<int>(values.rows()); }

  auto channel(int c) const { return values.col(c); }

  // Throws ShapeMismatch on an empty tensor, OutOfRange on non-finite values.
  void validate() const {
    if (values.rows() == 0 || values.cols() == 0)
      throw ShapeMismatch("empty activation tensor '" + layer_id + "'");
    if (!values.allFinite())
      throw OutOfRange("non-finite activation values in '" + layer_id + "'");
  }
};

}  // namespace dqa
