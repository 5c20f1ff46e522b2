#pragma once

#include "dscale/core/errors.hpp"
#include "json.hpp"

namespace dscale::train {

// Two-phase schedule: the first three quarters of the epochs run at base_lr,
// the final quarter at base_lr/10. Weight decay tracks lr/10 throughout.
struct Schedule {
  int epochs = 400;
  int steps_per_epoch = 500;
  double base_lr = 1e-4;

  void validate() const {
    if (epochs < 1) throw ConfigError("schedule: epochs must be >= 1");
    if (steps_per_epoch < 1) throw ConfigError("schedule: steps_per_epoch must be >= 1");
    if (base_lr <= 0.0) throw ConfigError("schedule: base_lr must be positive");
  }

  int phase_boundary() const { return epochs * 3 / 4; }

  double lr_at(int epoch) const {
    if (epoch < 0 || epoch >= epochs)
      throw ConfigError("schedule: epoch " + std::to_string(epoch) + " outside 0.." +
                        std::to_string(epochs - 1));
    return epoch < phase_boundary() ? base_lr : base_lr / 10.0;
  }

  double wd_at(int epoch) const { return lr_at(epoch) / 10.0; }
};

inline void to_json(nlohmann::json& j, const Schedule& s) {
  j = {{"epochs", s.epochs}, {"steps_per_epoch", s.steps_per_epoch}, {"base_lr", s.base_lr}};
}

inline void from_json(const nlohmann::json& j, Schedule& s) {
  j.at("epochs").get_to(s.epochs);
  j.at("steps_per_epoch").get_to(s.steps_per_epoch);
  j.at("base_lr").get_to(s.base_lr);
}

}  // namespace dscale::train
