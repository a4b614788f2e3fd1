#include "telescopic/train/protocol.hpp"

#include "telescopic/core/errors.hpp"

namespace telescopic {

PlateauScheduler::PlateauScheduler(Real lr, Real factor, std::size_t patience)
    : lr_(lr), factor_(factor), patience_(patience) {
  if (!(factor > 0 && factor < 1)) throw ParameterError("plateau scheduler factor must lie in (0,1)");
  if (patience == 0) throw ParameterError("plateau scheduler patience must be at least 1");
}

Real PlateauScheduler::step(Real val_loss) {
  if (val_loss < best_) {
    best_ = val_loss;
    bad_ = 0;
  } else if (++bad_ >= patience_) {
    lr_ *= factor_;
    bad_ = 0;
    ++reductions_;
  }
  return lr_;
}

EarlyStopper::EarlyStopper(std::size_t patience) : patience_(patience) {
  if (patience == 0) throw ParameterError("early stopping patience must be at least 1");
}

bool EarlyStopper::step(std::size_t epoch, double score) {
  improved_ = score > best_;
  if (improved_) {
    best_ = score;
    best_epoch_ = epoch;
    bad_ = 0;
    return false;
  }
  return ++bad_ >= patience_;
}

}  // namespace telescopic
