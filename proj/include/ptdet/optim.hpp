#pragma once

#include <string>
#include <vector>

#include "ptdet/nn.hpp"

namespace ptdet {

/// AdamW with decoupled weight decay. Throws NumericalError when a gradient
/// goes non-finite, naming the offending parameter.
class AdamW {
 public:
  AdamW(ParamStore& store, double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.999,
        double weight_decay = 1e-4, double eps = 1e-8);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  long step_count() const { return step_; }

  void zero_grad();
  void step();

 private:
  ParamStore& store_;
  double lr_, beta1_, beta2_, weight_decay_, eps_;
  long step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace ptdet
