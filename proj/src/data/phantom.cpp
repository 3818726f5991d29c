#include "upet/data/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "upet/core/errors.hpp"

namespace upet {

namespace {

constexpr double kWhiteMatterScale = 0.72;
constexpr double kVentricleScale = 0.25;
constexpr double kRegionRadius = 0.3;

// Region centres in normalized head coordinates (z, y, x).
constexpr std::array<std::array<double, 3>, kPhantomRegions> kRegionCentres{{
    {0.6, -0.4, 0.3},
    {-0.6, -0.4, 0.3},
    {0.7, 0.1, -0.3},
    {-0.7, 0.1, -0.3},
    {0.0, 0.8, 0.2},
    {0.0, -0.8, -0.2},
}};

constexpr std::uint64_t kSubjectStream = 0x5u;
constexpr std::uint64_t kPairingStream = 0x9u;

float mri_intensity(Tissue t) {
  switch (t) {
    case Tissue::Cortex:
      return 0.9f;
    case Tissue::WhiteMatter:
      return 0.6f;
    case Tissue::Ventricle:
      return 0.2f;
    default:
      return 0.0f;
  }
}

float pet_uptake(Tissue t) {
  switch (t) {
    case Tissue::Cortex:
      return 1.0f;
    case Tissue::WhiteMatter:
      return 0.7f;
    case Tissue::Ventricle:
      return 0.1f;
    default:
      return 0.0f;
  }
}

int ventricle_dilation(Diagnosis label) {
  return label == Diagnosis::AD ? 2 : label == Diagnosis::MCI ? 1 : 0;
}

// Voxel offset from the head centre, rotated into head coordinates (voxels).
std::array<double, 3> head_coords(const HeadGeometry& g, Index z, Index y, Index x) {
  const double pz = static_cast<double>(z) - g.center[0];
  const double py = static_cast<double>(y) - g.center[1];
  const double px = static_cast<double>(x) - g.center[2];
  const double c = std::cos(g.angle), s = std::sin(g.angle);
  return {pz, c * py + s * px, -s * py + c * px};
}

template <typename F>
void for_each_voxel(Dims dims, F&& f) {
  std::size_t i = 0;
  for (Index z = 0; z < dims.d; ++z)
    for (Index y = 0; y < dims.h; ++y)
      for (Index x = 0; x < dims.w; ++x, ++i) f(i, z, y, x);
}

}  // namespace

void PhantomConfig::validate() const {
  if (dims.d < 16 || dims.h < 16 || dims.w < 16) {
    throw ValueError("phantom dims " + dims.str() + " are too small for the region template (need >= 16 per axis)");
  }
  if (subjects < 1) throw ValueError("phantom needs at least one subject");
  if (sessions_per_subject < 1) throw ValueError("phantom needs at least one session per subject");
  if (subjects > 9999 || sessions_per_subject > 99) throw ValueError("too many subjects or sessions for the id format");
  double total = 0.0;
  for (double p : class_probabilities) {
    if (!(p >= 0.0)) throw ValueError("class probabilities must be non-negative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValueError("class probabilities must sum to 1");
  if (!(paired_fraction >= 0.0 && paired_fraction <= 1.0)) throw ValueError("paired_fraction must lie in [0, 1]");
  if (!(mci_uptake_factor > 0.0 && mci_uptake_factor <= 1.0) || !(ad_uptake_factor > 0.0 && ad_uptake_factor <= 1.0)) {
    throw ValueError("uptake factors must lie in (0, 1]");
  }
  if (!(noise_sigma >= 0.0)) throw ValueError("noise_sigma must be non-negative");
}

int affected_regions(Diagnosis label) {
  return label == Diagnosis::AD ? 4 : label == Diagnosis::MCI ? 2 : 0;
}

HeadGeometry nominal_geometry(Dims dims) {
  HeadGeometry g;
  g.center = {(dims.d - 1) / 2.0, (dims.h - 1) / 2.0, (dims.w - 1) / 2.0};
  g.semi_axes = {0.40 * dims.d, 0.44 * dims.h, 0.38 * dims.w};
  return g;
}

HeadGeometry draw_geometry(Dims dims, Rng& rng) {
  HeadGeometry g = nominal_geometry(dims);
  std::uniform_real_distribution<double> shift(-1.0, 1.0), scale(0.95, 1.05), angle(-0.1, 0.1);
  for (int a = 0; a < 3; ++a) g.center[a] += shift(rng);
  for (int a = 0; a < 3; ++a) g.semi_axes[a] *= scale(rng);
  g.angle = angle(rng);
  return g;
}

std::vector<Tissue> tissue_map(Dims dims, const HeadGeometry& g, Diagnosis label) {
  std::vector<Tissue> out(static_cast<std::size_t>(dims.numel()), Tissue::Background);
  const double dil = ventricle_dilation(label);
  for_each_voxel(dims, [&](std::size_t i, Index z, Index y, Index x) {
    const auto p = head_coords(g, z, y, x);
    double r2 = 0.0, v2 = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double u = p[a] / g.semi_axes[a];
      const double v = p[a] / (kVentricleScale * g.semi_axes[a] + dil);
      r2 += u * u;
      v2 += v * v;
    }
    if (r2 > 1.0) return;
    if (v2 <= 1.0) {
      out[i] = Tissue::Ventricle;
    } else if (r2 <= kWhiteMatterScale * kWhiteMatterScale) {
      out[i] = Tissue::WhiteMatter;
    } else {
      out[i] = Tissue::Cortex;
    }
  });
  return out;
}

std::vector<int> region_map(Dims dims, const HeadGeometry& g) {
  std::vector<int> out(static_cast<std::size_t>(dims.numel()), -1);
  for_each_voxel(dims, [&](std::size_t i, Index z, Index y, Index x) {
    const auto p = head_coords(g, z, y, x);
    for (int r = 0; r < kPhantomRegions; ++r) {
      double d2 = 0.0;
      for (int a = 0; a < 3; ++a) {
        const double u = p[a] / g.semi_axes[a] - kRegionCentres[r][a];
        d2 += u * u;
      }
      if (d2 <= kRegionRadius * kRegionRadius) {
        out[i] = r;
        break;
      }
    }
  });
  return out;
}

PhantomPair render_phantom(const PhantomConfig& cfg, const HeadGeometry& geometry, Diagnosis label, Rng* noise,
                           bool apply_uptake) {
  cfg.validate();
  const auto tissue = tissue_map(cfg.dims, geometry, label);
  const auto regions = region_map(cfg.dims, geometry);
  const int affected = apply_uptake ? affected_regions(label) : 0;
  const float factor = static_cast<float>(label == Diagnosis::AD ? cfg.ad_uptake_factor : cfg.mci_uptake_factor);

  PhantomPair out{Volume(cfg.dims, Modality::MRI), Volume(cfg.dims, Modality::PET)};
  auto& mri = out.mri.values();
  auto& pet = out.pet.values();
  for (std::size_t i = 0; i < tissue.size(); ++i) {
    mri[i] = mri_intensity(tissue[i]);
    pet[i] = pet_uptake(tissue[i]);
    if (regions[i] >= 0 && regions[i] < affected) pet[i] *= factor;
  }
  if (noise != nullptr && cfg.noise_sigma > 0.0) {
    std::normal_distribution<double> n(0.0, cfg.noise_sigma);
    for (float& v : mri) v = static_cast<float>(v + n(*noise));
    for (float& v : pet) v = static_cast<float>(v + n(*noise));
  }
  return out;
}

std::array<double, kPhantomRegions> region_means(const Volume& pet, const HeadGeometry& geometry) {
  const auto regions = region_map(pet.dims(), geometry);
  std::array<double, kPhantomRegions> sum{}, count{};
  for (std::size_t i = 0; i < regions.size(); ++i) {
    if (regions[i] < 0) continue;
    sum[regions[i]] += pet.values()[i];
    count[regions[i]] += 1.0;
  }
  std::array<double, kPhantomRegions> mean{};
  for (int r = 0; r < kPhantomRegions; ++r) {
    mean[r] = count[r] > 0 ? sum[r] / count[r] : std::numeric_limits<double>::quiet_NaN();
  }
  return mean;
}

std::string subject_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "sub-%04d", index);
  return buf;
}

std::string session_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "ses-%02d", index);
  return buf;
}

Manifest generate_phantom_dataset(const PhantomConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  const int total = cfg.subjects * cfg.sessions_per_subject;

  // Paired subset: the first round(f * total) studies of a seeded permutation.
  std::vector<int> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), 0);
  Rng pairing = make_rng({cfg.seed, kPairingStream});
  std::shuffle(order.begin(), order.end(), pairing);
  const auto n_paired = static_cast<std::size_t>(std::llround(cfg.paired_fraction * total));
  std::vector<bool> paired(static_cast<std::size_t>(total), false);
  for (std::size_t i = 0; i < n_paired; ++i) paired[static_cast<std::size_t>(order[i])] = true;

  Manifest manifest;
  manifest.base_dir = out_dir;
  for (int s = 1; s <= cfg.subjects; ++s) {
    Rng subject_rng = make_rng({cfg.seed, kSubjectStream, static_cast<std::uint64_t>(s)});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double draw = u(subject_rng);
    int cls = 0;
    double acc = cfg.class_probabilities[0];
    while (cls < kNumClasses - 1 && draw >= acc) acc += cfg.class_probabilities[++cls];
    const Diagnosis label = diagnosis_from_index(cls);
    const HeadGeometry geometry = draw_geometry(cfg.dims, subject_rng);

    for (int t = 1; t <= cfg.sessions_per_subject; ++t) {
      Rng noise = make_rng({cfg.seed, static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(t)});
      const PhantomPair pair = render_phantom(cfg, geometry, label, &noise);
      const std::string sub = subject_id(s), ses = session_id(t);
      const std::string stem = sub + "/" + ses + "/" + sub + "_" + ses;
      SampleRecord rec{sub, ses, stem + "_mri.raw", "", label};
      write_volume(pair.mri, out_dir / rec.mri_path);
      const int index = (s - 1) * cfg.sessions_per_subject + (t - 1);
      if (paired[static_cast<std::size_t>(index)]) {
        rec.pet_path = stem + "_pet.raw";
        write_volume(pair.pet, out_dir / rec.pet_path);
      }
      manifest.records.push_back(std::move(rec));
    }
  }
  write_manifest(manifest, out_dir / "manifest.csv");
  return manifest;
}

}  // namespace upet
