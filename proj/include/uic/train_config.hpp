#pragma once

#include <string>

#include "uic/error.hpp"

namespace uic {

/// Generator initialization by corpus reconstruction.
struct InitConfig {
  bool enabled = true;
  long steps = 10000;
  double lr = 2e-5;
  long warmup = 5000;
  int batch = 32;

  void validate() const {
    if (steps < 0) throw InputError("init.steps must be >= 0");
    if (!(lr > 0.0)) throw InputError("init.lr must be > 0");
    if (batch < 1) throw InputError("init.batch must be >= 1");
  }
};

/// Adversarial stage; optimizer betas/eps/decay are shared with the init stage.
struct TrainConfig {
  std::string mode = "adversarial";  // adversarial | pseudo
  long steps = 3000;
  double g_lr = 1e-5;
  long g_warmup = 150;
  double d_lr = 1e-5;
  long d_warmup = 0;
  int batch = 128;
  int d_steps_per_g = 1;
  double clip_norm = 1.0;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (mode != "adversarial" && mode != "pseudo") throw InputError("train.mode must be adversarial or pseudo");
    if (steps < 0) throw InputError("train.steps must be >= 0");
    if (!(g_lr > 0.0) || !(d_lr > 0.0)) throw InputError("learning rates must be > 0");
    if (batch < 1) throw InputError("train.batch must be >= 1");
    if (d_steps_per_g < 0) throw InputError("train.d_steps_per_g must be >= 0");
  }
};

}  // namespace uic
