#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace npdose {

enum class ErrorCode
{
  InvalidArgument,
  NoLocalData,
  DegenerateWeights,
  AllFitsFailed,
  InsufficientData,
  InvalidScale,
  ZeroVariance,
  EmptyInterval,
  ZeroGradient,
  TooManyFailedReplicates,
  MissingColumn,
  ParseError,
  EmptyData,
  IoError
};

inline std::string_view
to_string(ErrorCode code)
{
  switch (code) {
    case ErrorCode::InvalidArgument:
      return "InvalidArgument";
    case ErrorCode::NoLocalData:
      return "NoLocalData";
    case ErrorCode::DegenerateWeights:
      return "DegenerateWeights";
    case ErrorCode::AllFitsFailed:
      return "AllFitsFailed";
    case ErrorCode::InsufficientData:
      return "InsufficientData";
    case ErrorCode::InvalidScale:
      return "InvalidScale";
    case ErrorCode::ZeroVariance:
      return "ZeroVariance";
    case ErrorCode::EmptyInterval:
      return "EmptyInterval";
    case ErrorCode::ZeroGradient:
      return "ZeroGradient";
    case ErrorCode::TooManyFailedReplicates:
      return "TooManyFailedReplicates";
    case ErrorCode::MissingColumn:
      return "MissingColumn";
    case ErrorCode::ParseError:
      return "ParseError";
    case ErrorCode::EmptyData:
      return "EmptyData";
    case ErrorCode::IoError:
      return "IoError";
  }
  return "Unknown";
}

//! Every library failure is reported through this exception; `code()` is the
//! machine-readable category.
class Error : public std::runtime_error
{
public:
  Error(ErrorCode code, const std::string& what)
    : std::runtime_error(what)
    , code_(code)
  {
  }

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

[[noreturn]] inline void
fail(ErrorCode code, const std::string& what)
{
  throw Error(code, what);
}

} // namespace npdose
