#pragma once

#include <string>

#include "afcurve/data.hpp"
#include "afcurve/pipeline.hpp"

namespace afcurve {

// Run description loaded from a JSON file. The schema mirrors SyntheticConfig
// and TrainConfig plus model wiring and default artifact paths; unknown keys
// anywhere in the document are rejected so typos fail loudly.
struct RunConfig {
  std::uint64_t seed = 42;
  std::string model = "yield";  // "yield" | "price"
  int hidden = 16;
  double noise_guess = 4e-4;  // initial observation-noise scale fed to the model head

  SyntheticConfig synthetic = SyntheticConfig::defaults();
  TrainConfig train;

  std::string data_dir;  // optional defaults, overridable on the command line
  std::string out_dir;
  std::string checkpoint;

  void validate() const;
};

RunConfig parse_run_config(const std::string& json_text, const std::string& origin);
RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& cfg);

}  // namespace afcurve
