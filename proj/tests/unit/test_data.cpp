#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "test_support.hpp"
#include "upet/core/errors.hpp"
#include "upet/data/manifest.hpp"
#include "upet/data/phantom.hpp"
#include "upet/data/preprocess.hpp"
#include "upet/data/split.hpp"
#include "upet/data/volume.hpp"

using namespace upet;
using upet::testing::TempDir;

namespace {

Volume random_volume(Dims dims, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-3.0, 5.0);
  Volume v(dims, Modality::MRI);
  for (float& x : v.values()) x = static_cast<float>(u(rng));
  return v;
}

std::pair<double, double> mean_std(const Volume& v) {
  long double m = 0;
  for (float x : v.values()) m += x;
  m /= v.numel();
  long double s = 0;
  for (float x : v.values()) s += (x - m) * (x - m);
  return {static_cast<double>(m), std::sqrt(static_cast<double>(s / v.numel()))};
}

void write_bytes(const std::filesystem::path& p, std::size_t n) {
  std::ofstream out(p, std::ios::binary);
  std::vector<char> bytes(n, 0);
  out.write(bytes.data(), static_cast<std::streamsize>(n));
}

}  // namespace

TEST(VolumeIo, RoundTripIsBitwise) {
  TempDir dir("vol");
  Volume v = random_volume({8, 8, 8}, 1);
  v.set_modality(Modality::PET);
  write_volume(v, dir / "a.raw");
  const Volume r = read_volume(dir / "a.raw");
  EXPECT_EQ(r.dims(), v.dims());
  EXPECT_EQ(r.modality(), Modality::PET);
  EXPECT_EQ(r.voxel_size_mm(), v.voxel_size_mm());
  ASSERT_EQ(r.values().size(), v.values().size());
  EXPECT_EQ(std::memcmp(r.values().data(), v.values().data(), v.values().size() * sizeof(float)), 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "a.json"));
}

TEST(VolumeIo, TruncatedPayloadIsSizeMismatch) {
  TempDir dir("vol");
  write_volume(random_volume({4, 4, 4}, 2), dir / "a.raw");
  std::filesystem::resize_file(dir / "a.raw", 4 * 4 * 4 * 4 - 4);
  try {
    read_volume(dir / "a.raw");
    FAIL() << "expected a size mismatch";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("size mismatch"), std::string::npos);
  }
}

TEST(VolumeIo, HandWrittenHeaderWithMatchingPayloadAccepted) {
  TempDir dir("vol");
  std::ofstream(dir / "b.json") << R"({"dims":[2,2,2],"voxel_size_mm":[1.5,1.5,1.5],"modality":"MRI","dtype":"f32le"})";
  write_bytes(dir / "b.raw", 32);
  const Volume v = read_volume(dir / "b.raw");
  EXPECT_EQ(v.numel(), 8);
}

TEST(VolumeIo, UnknownDtypeRejected) {
  TempDir dir("vol");
  std::ofstream(dir / "c.json") << R"({"dims":[2,2,2],"voxel_size_mm":[1,1,1],"modality":"MRI","dtype":"f64le"})";
  write_bytes(dir / "c.raw", 64);
  EXPECT_THROW(read_volume(dir / "c.raw"), FormatError);
}

TEST(VolumeIo, MissingFilesAreIoErrors) {
  TempDir dir("vol");
  EXPECT_THROW(read_volume(dir / "none.raw"), IoError);
}

TEST(VolumeIo, InvalidGeometryRejected) {
  EXPECT_THROW(Volume(Dims{0, 2, 2}, Modality::MRI), ShapeError);
  EXPECT_THROW(Volume(Dims{2, 2, 2}, Modality::MRI, 0.0f, {1.0, 0.0, 1.0}), ValueError);
}

TEST(ZScore, NonConstantVolumeHasZeroMeanUnitStd) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto out = zscore_normalize(random_volume({9, 7, 5}, seed));
    EXPECT_FALSE(out.degenerate);
    const auto [m, s] = mean_std(out.volume);
    EXPECT_NEAR(m, 0.0, 1e-5);
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
}

TEST(ZScore, ConstantVolumeGivesZerosAndFlag) {
  const auto out = zscore_normalize(Volume({4, 4, 4}, Modality::MRI, 3.25f));
  EXPECT_TRUE(out.degenerate);
  for (float x : out.volume.values()) EXPECT_EQ(x, 0.0f);
}

TEST(ZScore, AffineInvariant) {
  const Volume v = random_volume({6, 6, 6}, 3);
  Volume w = v;
  for (float& x : w.values()) x = 2.5f * x + 7.0f;
  const auto a = zscore_normalize(v).volume;
  const auto b = zscore_normalize(w).volume;
  for (std::size_t i = 0; i < a.values().size(); ++i) EXPECT_NEAR(a.values()[i], b.values()[i], 1e-5);
}

TEST(ZScore, Idempotent) {
  const auto a = zscore_normalize(random_volume({6, 5, 4}, 4)).volume;
  const auto b = zscore_normalize(a).volume;
  for (std::size_t i = 0; i < a.values().size(); ++i) EXPECT_NEAR(a.values()[i], b.values()[i], 1e-5);
}

TEST(CropPad, CropRemovesFloorHalfOnLowSide) {
  const Volume v = random_volume({120, 130, 120}, 5);
  const Volume c = center_crop_or_pad(v, {112, 128, 112});
  EXPECT_EQ(c.dims(), (Dims{112, 128, 112}));
  EXPECT_EQ(c.at(0, 0, 0), v.at(4, 1, 4));
  EXPECT_EQ(c.at(111, 127, 111), v.at(115, 128, 115));
}

TEST(CropPad, SameDimsIsIdentity) {
  const Volume v = random_volume({5, 6, 7}, 6);
  const Volume c = center_crop_or_pad(v, v.dims());
  EXPECT_EQ(c.values(), v.values());
}

TEST(CropPad, PadCentresOriginal) {
  Volume v({3, 3, 3}, Modality::MRI, 1.0f);
  const Volume p = center_crop_or_pad(v, {5, 5, 5});
  for (Index z = 0; z < 5; ++z)
    for (Index y = 0; y < 5; ++y)
      for (Index x = 0; x < 5; ++x) {
        const bool inside = z >= 1 && z <= 3 && y >= 1 && y <= 3 && x >= 1 && x <= 3;
        EXPECT_EQ(p.at(z, y, x), inside ? 1.0f : 0.0f);
      }
}

TEST(CropPad, OddPadSurplusGoesHigh) {
  Volume v({2, 2, 2}, Modality::MRI, 1.0f);
  const Volume p = center_crop_or_pad(v, {5, 2, 2});
  EXPECT_EQ(p.at(0, 0, 0), 0.0f);
  EXPECT_EQ(p.at(1, 0, 0), 1.0f);
  EXPECT_EQ(p.at(2, 0, 0), 1.0f);
  EXPECT_EQ(p.at(3, 0, 0), 0.0f);
  EXPECT_EQ(p.at(4, 0, 0), 0.0f);
}

TEST(Manifest, RoundTripAndResolve) {
  TempDir dir("man");
  Manifest m;
  m.records = {{"sub-0001", "ses-01", "a/m.raw", "a/p.raw", Diagnosis::AD},
               {"sub-0002", "ses-01", "b/m.raw", "", Diagnosis::MCI}};
  write_manifest(m, dir / "manifest.csv");
  const Manifest r = read_manifest(dir / "manifest.csv");
  ASSERT_EQ(r.records.size(), 2u);
  EXPECT_EQ(r.records[0].label, Diagnosis::AD);
  EXPECT_TRUE(r.records[0].paired());
  EXPECT_FALSE(r.records[1].paired());
  EXPECT_EQ(r.resolve("a/m.raw"), dir.path() / "a/m.raw");
}

TEST(Manifest, DuplicateStudyRejected) {
  TempDir dir("man");
  std::ofstream(dir / "m.csv") << "subject_id,session_id,mri_path,pet_path,label\n"
                                  "s1,t1,a.raw,,CN\ns1,t1,b.raw,,AD\n";
  EXPECT_THROW(read_manifest(dir / "m.csv"), FormatError);
}

TEST(Manifest, BadLabelAndHeaderRejected) {
  TempDir dir("man");
  std::ofstream(dir / "m.csv") << "subject_id,session_id,mri_path,pet_path,label\ns1,t1,a.raw,,XX\n";
  EXPECT_THROW(read_manifest(dir / "m.csv"), FormatError);
  std::ofstream(dir / "n.csv") << "subject,session\n";
  EXPECT_THROW(read_manifest(dir / "n.csv"), FormatError);
}

std::vector<std::string> ids(int n) {
  std::vector<std::string> out;
  for (int i = 1; i <= n; ++i) out.push_back(subject_id(i));
  return out;
}

TEST(Split, RoundingRule) {
  const auto a = subject_level_split(ids(636), {0.70, 0.15, 0.15}, 1);
  EXPECT_EQ(a.train.size(), 446u);
  EXPECT_EQ(a.val.size(), 95u);
  EXPECT_EQ(a.test.size(), 95u);
  const auto b = subject_level_split(ids(20), {0.70, 0.15, 0.15}, 1);
  EXPECT_EQ(b.train.size(), 14u);
  EXPECT_EQ(b.val.size(), 3u);
  EXPECT_EQ(b.test.size(), 3u);
}

TEST(Split, SameSeedSameSpec) {
  const auto a = subject_level_split(ids(50), {0.70, 0.15, 0.15}, 9);
  const auto b = subject_level_split(ids(50), {0.70, 0.15, 0.15}, 9);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_EQ(a.test, b.test);
  const auto c = subject_level_split(ids(50), {0.70, 0.15, 0.15}, 10);
  EXPECT_NE(a.train, c.train);
}

TEST(Split, InvalidInputsRejected) {
  EXPECT_THROW(subject_level_split(ids(2), {0.70, 0.15, 0.15}, 0), ValueError);
  EXPECT_THROW(subject_level_split(ids(10), {0.70, 0.20, 0.15}, 0), ValueError);
}

TEST(Split, DuplicateIdsCountOnce) {
  auto v = ids(10);
  v.insert(v.end(), v.begin(), v.begin() + 5);
  const auto s = subject_level_split(v, {0.6, 0.2, 0.2}, 3);
  EXPECT_EQ(s.train.size() + s.val.size() + s.test.size(), 10u);
}

TEST(Split, FileRoundTrip) {
  TempDir dir("split");
  const auto a = subject_level_split(ids(30), {0.6, 0.2, 0.2}, 4);
  write_splits(a, dir / "s.json");
  const auto b = read_splits(dir / "s.json");
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(b.seed, 4u);
  EXPECT_EQ(b.find(a.val.front()), SplitName::Val);
}

PhantomConfig small_config() {
  PhantomConfig cfg;
  cfg.dims = {32, 32, 32};
  cfg.noise_sigma = 0.0;
  return cfg;
}

TEST(Phantom, NoiseFreeCnPetTakesTissueValuesOnly) {
  const PhantomConfig cfg = small_config();
  Rng rng(1);
  const auto g = draw_geometry(cfg.dims, rng);
  const auto pair = render_phantom(cfg, g, Diagnosis::CN, nullptr);
  std::set<float> values(pair.pet.values().begin(), pair.pet.values().end());
  // Background outside the head is 0.
  EXPECT_EQ(values, (std::set<float>{0.0f, 0.1f, 0.7f, 1.0f}));
}

TEST(Phantom, AdRegionalUptakeIsScaled) {
  const PhantomConfig cfg = small_config();
  Rng rng(2);
  const auto g = draw_geometry(cfg.dims, rng);
  const auto ad = render_phantom(cfg, g, Diagnosis::AD, nullptr);
  const auto base = render_phantom(cfg, g, Diagnosis::AD, nullptr, false);
  const auto regions = region_map(cfg.dims, g);
  double s_ad = 0, s_base = 0;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    if (regions[i] >= 0 && regions[i] < 4) {
      s_ad += ad.pet.values()[i];
      s_base += base.pet.values()[i];
    }
  }
  ASSERT_GT(s_base, 0.0);
  EXPECT_NEAR(s_ad / s_base, cfg.ad_uptake_factor, 1e-6);
}

TEST(Phantom, AtrophyEnlargesVentricles) {
  const PhantomConfig cfg = small_config();
  const auto g = nominal_geometry(cfg.dims);
  auto count = [&](Diagnosis d) {
    const auto t = tissue_map(cfg.dims, g, d);
    return std::count(t.begin(), t.end(), Tissue::Ventricle);
  };
  EXPECT_LT(count(Diagnosis::CN), count(Diagnosis::MCI));
  EXPECT_LT(count(Diagnosis::MCI), count(Diagnosis::AD));
}

TEST(Phantom, SmallDimsRejected) {
  PhantomConfig cfg;
  cfg.dims = {8, 8, 8};
  try {
    cfg.validate();
    FAIL();
  } catch (const ValueError& e) {
    EXPECT_NE(std::string(e.what()).find("region template"), std::string::npos);
  }
}

TEST(Phantom, DatasetIsDeterministicAndComplete) {
  TempDir a("ph"), b("ph");
  PhantomConfig cfg;
  cfg.dims = {16, 16, 16};
  cfg.subjects = 6;
  cfg.sessions_per_subject = 2;
  cfg.seed = 11;
  const Manifest ma = generate_phantom_dataset(cfg, a.path());
  const Manifest mb = generate_phantom_dataset(cfg, b.path());
  ASSERT_EQ(ma.records.size(), 12u);
  std::size_t paired = 0;
  for (std::size_t i = 0; i < ma.records.size(); ++i) {
    const auto& r = ma.records[i];
    EXPECT_EQ(r.mri_path, mb.records[i].mri_path);
    const Volume va = read_volume(a / r.mri_path);
    const Volume vb = read_volume(b / r.mri_path);
    EXPECT_EQ(va.values(), vb.values());
    if (r.paired()) {
      ++paired;
      EXPECT_EQ(read_volume(a / r.pet_path).values(), read_volume(b / r.pet_path).values());
    }
  }
  EXPECT_EQ(paired, static_cast<std::size_t>(std::llround(0.38 * 12)));
  const Manifest reread = read_manifest(a / "manifest.csv");
  EXPECT_EQ(reread.records.size(), 12u);
  // Sessions of one subject share the label.
  std::map<std::string, Diagnosis> labels;
  for (const auto& r : reread.records) {
    auto [it, fresh] = labels.emplace(r.subject_id, r.label);
    if (!fresh) {
      EXPECT_EQ(it->second, r.label);
    }
  }
}

TEST(Phantom, FullPairingWritesEveryPet) {
  TempDir dir("ph");
  PhantomConfig cfg;
  cfg.dims = {16, 16, 16};
  cfg.subjects = 4;
  cfg.paired_fraction = 1.0;
  for (const auto& r : generate_phantom_dataset(cfg, dir.path()).records) EXPECT_TRUE(r.paired());
}

// Sanity oracle: the classes are separable from noise-free regional PET means.
TEST(Phantom, NearestCentroidOnRegionMeansIsPerfect) {
  const PhantomConfig cfg = small_config();
  struct Item {
    std::array<double, kPhantomRegions> means;
    int label;
  };
  std::vector<Item> items;
  for (int i = 0; i < 60; ++i) {
    Rng rng = make_rng({77, static_cast<std::uint64_t>(i)});
    const auto g = draw_geometry(cfg.dims, rng);
    const auto label = diagnosis_from_index(i % 3);
    items.push_back({region_means(render_phantom(cfg, g, label, nullptr).pet, g), i % 3});
  }
  std::array<std::array<double, kPhantomRegions>, 3> centroid{};
  std::array<int, 3> count{};
  for (std::size_t i = 0; i < items.size(); i += 2) {
    for (int r = 0; r < kPhantomRegions; ++r) centroid[items[i].label][r] += items[i].means[r];
    ++count[items[i].label];
  }
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < kPhantomRegions; ++r) centroid[c][r] /= count[c];
  for (std::size_t i = 1; i < items.size(); i += 2) {
    int best = -1;
    double best_d = 1e300;
    for (int c = 0; c < 3; ++c) {
      double d = 0;
      for (int r = 0; r < kPhantomRegions; ++r) d += std::pow(items[i].means[r] - centroid[c][r], 2);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    EXPECT_EQ(best, items[i].label) << "sample " << i;
  }
}
