#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "upet/core/random.hpp"
#include "upet/data/manifest.hpp"
#include "upet/data/volume.hpp"

namespace upet {

struct PhantomConfig {
  Dims dims{32, 32, 32};
  int subjects = 40;
  int sessions_per_subject = 1;
  std::array<double, 3> class_probabilities{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};  // CN, MCI, AD
  double paired_fraction = 0.38;
  double noise_sigma = 0.03;
  double mci_uptake_factor = 0.85;
  double ad_uptake_factor = 0.70;
  std::uint64_t seed = 0;

  /// Throws ValueError; dims below 16 per axis cannot hold the region template.
  void validate() const;
};

enum class Tissue : std::uint8_t { Background, Cortex, WhiteMatter, Ventricle };

/// Per-subject head placement: centre (voxels), semi-axes (voxels) and a
/// small rotation in the H-W plane.
struct HeadGeometry {
  std::array<double, 3> center{};
  std::array<double, 3> semi_axes{};
  double angle = 0.0;
};

inline constexpr int kPhantomRegions = 6;

/// Regions whose uptake is reduced: the first two for MCI, the first four for AD.
int affected_regions(Diagnosis label);

/// Undisturbed head centred in the volume; used as the basis for jitter.
HeadGeometry nominal_geometry(Dims dims);
HeadGeometry draw_geometry(Dims dims, Rng& rng);

/// Per-voxel tissue class; ventricles are dilated by 1 (MCI) or 2 (AD) voxels.
std::vector<Tissue> tissue_map(Dims dims, const HeadGeometry& geometry, Diagnosis label);
/// Per-voxel canonical region index in [0, kPhantomRegions), or -1 outside every region.
std::vector<int> region_map(Dims dims, const HeadGeometry& geometry);

struct PhantomPair {
  Volume mri;
  Volume pet;
};

/// Renders one study. `noise` may be null for a noise-free rendering;
/// `apply_uptake` = false disables the regional hypometabolism (geometry,
/// including ventricle dilation, is unchanged).
PhantomPair render_phantom(const PhantomConfig& cfg, const HeadGeometry& geometry, Diagnosis label, Rng* noise,
                           bool apply_uptake = true);

/// Mean PET value per canonical region (inside the head), NaN for empty regions.
std::array<double, kPhantomRegions> region_means(const Volume& pet, const HeadGeometry& geometry);

/// Writes sub-XXXX/ses-YY volumes plus manifest.csv below `out_dir`.
/// Every study draws from its own generator keyed by (seed, subject, session).
Manifest generate_phantom_dataset(const PhantomConfig& cfg, const std::filesystem::path& out_dir);

std::string subject_id(int index);
std::string session_id(int index);

}  // namespace upet
