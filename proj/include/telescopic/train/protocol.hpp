#pragma once

#include <cstddef>
#include <limits>

#include "telescopic/core/tensor.hpp"

namespace telescopic {

// Cuts the learning rate by `factor` once the monitored loss has gone
// `patience` consecutive epochs without a strict decrease. The counter
// restarts after every cut.
class PlateauScheduler {
 public:
  PlateauScheduler(Real lr, Real factor = 0.3, std::size_t patience = 5);

  Real step(Real val_loss);
  Real lr() const { return lr_; }
  std::size_t bad_epochs() const { return bad_; }
  std::size_t reductions() const { return reductions_; }

 private:
  Real lr_;
  Real factor_;
  std::size_t patience_;
  Real best_ = std::numeric_limits<Real>::infinity();
  std::size_t bad_ = 0;
  std::size_t reductions_ = 0;
};

// Signals a stop after `patience` consecutive epochs without a strict
// increase of the monitored score.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience = 20);

  // Returns true when training should stop after this epoch.
  bool step(std::size_t epoch, double score);
  bool improved_last() const { return improved_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_score() const { return best_; }

 private:
  std::size_t patience_;
  double best_ = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t bad_ = 0;
  bool improved_ = false;
};

}  // namespace telescopic
