#include "upet/data/preprocess.hpp"

#include <cmath>

#include "upet/core/errors.hpp"

namespace upet {

NormalizedVolume zscore_normalize(const Volume& v) {
  const auto& x = v.values();
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (float f : x) mean += f;
  mean /= n;
  double var = 0.0;
  for (float f : x) var += (f - mean) * (f - mean);
  const double sd = std::sqrt(var / n);

  NormalizedVolume out{Volume(v.dims(), v.modality(), 0.0f, v.voxel_size_mm()), false};
  if (sd < 1e-8) {
    out.degenerate = true;
    return out;
  }
  auto& y = out.volume.values();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = static_cast<float>((x[i] - mean) / sd);
  return out;
}

namespace {

// Input index of output position 0 along one axis: positive when cropping,
// negative when padding. Floor of half the surplus, so the odd voxel is on the high side.
Index axis_offset(Index in, Index out) {
  return in >= out ? (in - out) / 2 : -((out - in) / 2);
}

}  // namespace

Volume center_crop_or_pad(const Volume& v, Dims target) {
  if (target.d <= 0 || target.h <= 0 || target.w <= 0) {
    throw ShapeError("center_crop_or_pad: target dims must be positive, got " + target.str());
  }
  const Dims& in = v.dims();
  if (in == target) return v;
  const Index oz = axis_offset(in.d, target.d);
  const Index oy = axis_offset(in.h, target.h);
  const Index ox = axis_offset(in.w, target.w);
  Volume out(target, v.modality(), 0.0f, v.voxel_size_mm());
  for (Index z = 0; z < target.d; ++z) {
    const Index iz = z + oz;
    if (iz < 0 || iz >= in.d) continue;
    for (Index y = 0; y < target.h; ++y) {
      const Index iy = y + oy;
      if (iy < 0 || iy >= in.h) continue;
      for (Index x = 0; x < target.w; ++x) {
        const Index ix = x + ox;
        if (ix >= 0 && ix < in.w) out.at(z, y, x) = v.at(iz, iy, ix);
      }
    }
  }
  return out;
}

}  // namespace upet
