#pragma once

#include "upet/data/volume.hpp"

namespace upet {

struct NormalizedVolume {
  Volume volume;
  /// Set when the input standard deviation was below 1e-8; the volume is then all zeros.
  bool degenerate = false;
};

/// Shifts and scales to zero mean and unit (population) standard deviation.
NormalizedVolume zscore_normalize(const Volume& v);

/// Centered crop along axes that are too large, symmetric zero padding along
/// axes that are too small. An odd surplus goes to the high-index side.
Volume center_crop_or_pad(const Volume& v, Dims target);

}  // namespace upet
