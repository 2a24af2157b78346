#pragma once

#include <stdexcept>
#include <string>

namespace routenas {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define ROUTENAS_DEFINE_ERROR(Name)        \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  }

// layout-model
ROUTENAS_DEFINE_ERROR(ParseError);
ROUTENAS_DEFINE_ERROR(SchemaError);
ROUTENAS_DEFINE_ERROR(IntegrityError);
ROUTENAS_DEFINE_ERROR(IoError);

// search-space
ROUTENAS_DEFINE_ERROR(LengthMismatch);
ROUTENAS_DEFINE_ERROR(IllegalValue);
ROUTENAS_DEFINE_ERROR(TaskMismatch);

// cnn-engine
ROUTENAS_DEFINE_ERROR(ShapeError);

// metrics
ROUTENAS_DEFINE_ERROR(DegenerateInput);
ROUTENAS_DEFINE_ERROR(SingleClass);
ROUTENAS_DEFINE_ERROR(TooFewDesigns);

// dataset-synth / cli
ROUTENAS_DEFINE_ERROR(ConfigError);

#undef ROUTENAS_DEFINE_ERROR

class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

/// Raised by the search engine when the fitness function throws; carries the genome text.
class EvaluatorFailure : public Error {
 public:
  EvaluatorFailure(const std::string& genome, const std::string& cause)
      : Error("evaluation failed for genome " + genome + ": " + cause), genome_(genome) {}
  const std::string& genome() const noexcept { return genome_; }

 private:
  std::string genome_;
};

}  // namespace routenas
