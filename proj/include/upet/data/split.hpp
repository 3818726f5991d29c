#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace upet {

enum class SplitName { Train, Val, Test };

std::string to_string(SplitName s);
SplitName parse_split_name(const std::string& text);

struct SplitRatios {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

struct SplitSpec {
  std::vector<std::string> train, val, test;
  SplitRatios ratios;
  std::uint64_t seed = 0;

  const std::vector<std::string>& subjects(SplitName s) const;
  std::optional<SplitName> find(const std::string& subject_id) const;
};

/// Subject-level partition: ids are sorted and de-duplicated, shuffled with a
/// generator seeded by `seed`, then cut by floor(ratio * n) with the leftover
/// subjects handed out one at a time in train, val, test order.
SplitSpec subject_level_split(std::vector<std::string> subject_ids, SplitRatios ratios, std::uint64_t seed);

void write_splits(const SplitSpec& spec, const std::filesystem::path& path);
SplitSpec read_splits(const std::filesystem::path& path);

}  // namespace upet
