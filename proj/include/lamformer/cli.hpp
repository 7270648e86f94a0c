#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>

#include "lamformer/model.hpp"
#include "lamformer/training.hpp"

namespace lamformer {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Flat key=value training configuration. Lines starting with '#' and blank
// lines are ignored.
struct TrainConfig {
  ModelConfig model{};  // d_features is taken from the data
  TrainOptions train{};
  std::size_t stride = 1;
};

// Throws ConfigError naming the offending key or value.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::string& path);

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2 };

// Entry point of the lamformer executable.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lamformer
