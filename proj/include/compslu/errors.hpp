#pragma once

#include <stdexcept>
#include <string>

namespace compslu {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class IndexError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class ValidationError : public Error { using Error::Error; };
class VocabularyError : public Error { using Error::Error; };
class AlignmentError : public Error { using Error::Error; };
class LengthError : public Error { using Error::Error; };
class DataError : public Error { using Error::Error; };
class UndefinedCorrelationError : public Error { using Error::Error; };

}  // namespace compslu
