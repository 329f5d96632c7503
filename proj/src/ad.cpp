#include "afcurve/ad.hpp"

namespace afcurve::ad {

Tape*& current_tape() {
  thread_local Tape* t = nullptr;
  return t;
}

}  // namespace afcurve::ad
