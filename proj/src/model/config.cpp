#include "upet/model/config.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "upet/core/errors.hpp"
#include "upet/core/text.hpp"

namespace upet {

void UPetConfig::validate() const {
  if (levels < 3) throw ValueError("levels must be >= 3, got " + std::to_string(levels));
  if (levels > 8) throw ValueError("levels must be <= 8, got " + std::to_string(levels));
  if (base_channels < 1) throw ValueError("base_channels must be >= 1");
  if (num_classes != 3) throw ValueError("num_classes is fixed to 3 (CN, MCI, AD)");
  const Index div = Index{1} << (levels - 1);
  for (Index e : {input_shape.d, input_shape.h, input_shape.w}) {
    if (e <= 0 || e % div != 0) {
      throw ValueError("input extents " + input_shape.str() + " must be divisible by 2^(levels-1) = " +
                       std::to_string(div));
    }
  }
  if (!(lambda_l1 >= 0.0) || !std::isfinite(lambda_l1)) throw ValueError("lambda_l1 must be finite and >= 0");
  if (!deep_supervision_weights.empty() && static_cast<int>(deep_supervision_weights.size()) != levels - 1) {
    throw ValueError("deep_supervision_weights needs " + std::to_string(levels - 1) + " entries");
  }
  for (double w : deep_supervision_weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValueError("deep supervision weights must be finite and >= 0");
  }
}

int UPetConfig::channels(int level) const { return base_channels << (level - 1); }

int UPetConfig::aux_count() const { return use_pet_head && deep_supervision ? levels - 1 : 0; }

std::vector<double> UPetConfig::aux_weights() const {
  std::vector<double> w;
  for (int l = 1; l <= aux_count(); ++l) {
    w.push_back(deep_supervision_weights.empty() ? std::ldexp(1.0, -l) : deep_supervision_weights[l - 1]);
  }
  return w;
}

std::string UPetConfig::canonical() const {
  std::ostringstream s;
  s << "levels=" << levels << ";base_channels=" << base_channels << ";input_shape=" << input_shape.str()
    << ";num_classes=" << num_classes << ";use_attention=" << use_attention << ";use_pet_head=" << use_pet_head
    << ";deep_supervision=" << deep_supervision << ";bottleneck_prediction=" << bottleneck_prediction
    << ";aggregate_probabilities=" << aggregate_probabilities;
  return s.str();
}

std::vector<std::pair<std::string, std::string>> UPetConfig::entries() const {
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  auto d = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  std::string weights;
  for (std::size_t i = 0; i < deep_supervision_weights.size(); ++i) {
    weights += (i ? "," : "") + d(deep_supervision_weights[i]);
  }
  return {{"levels", std::to_string(levels)},
          {"base_channels", std::to_string(base_channels)},
          {"input_shape", input_shape.str()},
          {"num_classes", std::to_string(num_classes)},
          {"use_attention", b(use_attention)},
          {"use_pet_head", b(use_pet_head)},
          {"lambda_l1", d(lambda_l1)},
          {"deep_supervision", b(deep_supervision)},
          {"deep_supervision_weights", weights},
          {"bottleneck_prediction", b(bottleneck_prediction)},
          {"aggregate_probabilities", b(aggregate_probabilities)}};
}

bool UPetConfig::set_entry(const std::string& key, const std::string& value) {
  if (key == "levels") {
    levels = static_cast<int>(text::parse_int(value, key));
  } else if (key == "base_channels") {
    base_channels = static_cast<int>(text::parse_int(value, key));
  } else if (key == "input_shape") {
    input_shape = parse_dims(text::trim(value));
  } else if (key == "num_classes") {
    num_classes = static_cast<int>(text::parse_int(value, key));
  } else if (key == "use_attention") {
    use_attention = text::parse_bool(value, key);
  } else if (key == "use_pet_head") {
    use_pet_head = text::parse_bool(value, key);
  } else if (key == "lambda_l1") {
    lambda_l1 = text::parse_double(value, key);
  } else if (key == "deep_supervision") {
    deep_supervision = text::parse_bool(value, key);
  } else if (key == "deep_supervision_weights") {
    deep_supervision_weights.clear();
    if (!text::trim(value).empty()) {
      for (const auto& w : text::split(value, ',')) deep_supervision_weights.push_back(text::parse_double(w, key));
    }
  } else if (key == "bottleneck_prediction") {
    bottleneck_prediction = text::parse_bool(value, key);
  } else if (key == "aggregate_probabilities") {
    aggregate_probabilities = text::parse_bool(value, key);
  } else {
    return false;
  }
  return true;
}

std::uint64_t UPetConfig::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : canonical()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string fingerprint_hex(std::uint64_t fp) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fp));
  return buf;
}

}  // namespace upet
