#pragma once

#include <stdexcept>
#include <string>

namespace dqa {

// Base class for all toolkit errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// quant_core
class AllZeroLayer : public Error {
 public:
  using Error::Error;
};
class ShapeMismatch : public Error {
 public:
  using Error::Error;
};
class OutOfRange : public Error {
 public:
  using Error::Error;
};
class CorruptStream : public Error {
 public:
  using Error::Error;
};

// huffman_codec
class SymbolOutOfRange : public Error {
 public:
  using Error::Error;
};
class EmptyHistogram : public Error {
 public:
  using Error::Error;
};
class UncodedSymbol : public Error {
 public:
  using Error::Error;
};
class TruncatedStream : public Error {
 public:
  using Error::Error;
};
class InvalidCode : public Error {
 public:
  using Error::Error;
};

// channel_ranking
class UnknownLayer : public Error {
 public:
  using Error::Error;
};
class ModelMismatch : public Error {
 public:
  using Error::Error;
};
class EvaluatorFailure : public Error {
 public:
  using Error::Error;
};

// storage_formats
class BadMagic : public Error {
 public:
  using Error::Error;
};
class VersionUnsupported : public Error {
 public:
  using Error::Error;
};
class Truncated : public Error {
 public:
  using Error::Error;
};
class ChecksumMismatch : public Error {
 public:
  using Error::Error;
};
class FormatError : public Error {
 public:
  using Error::Error;
};

// file handling
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dqa
