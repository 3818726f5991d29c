#include "upet/training/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "upet/core/text.hpp"

namespace upet {

static_assert(std::endian::native == std::endian::little, "payloads are written as native little-endian floats");

namespace {

constexpr const char* kMagic = "UPET-CHECKPOINT 1";

std::string shape_text(const Shape& s) {
  if (s.rank() == 0) return "scalar";
  std::string out;
  for (std::size_t i = 0; i < s.rank(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

Shape parse_shape(const std::string& t) {
  if (t == "scalar") return Shape{};
  std::vector<Index> dims;
  for (const auto& p : text::split(t, 'x')) {
    const auto v = text::parse_int(p, "shape");
    if (v <= 0) throw ValueError("shape extents must be positive");
    dims.push_back(v);
  }
  return Shape(dims);
}

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct IndexEntry {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;
  std::uint64_t count = 0;
};

}  // namespace

Checkpoint make_checkpoint(const UPetModel<float>& model, const AdamState& adam, int epoch,
                           std::optional<EvalReport> validation) {
  Checkpoint c;
  c.config = model.config();
  c.fingerprint = model.config().fingerprint();
  c.epoch = epoch;
  for (const auto& p : model.parameters()) c.parameters.push_back({p.name, p.tensor.clone()});
  c.adam = adam;
  c.validation = std::move(validation);
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  ckpt.adam.validate();
  std::ostringstream head;
  head << kMagic << "\n";
  head << "fingerprint = " << fingerprint_hex(ckpt.fingerprint) << "\n";
  head << "epoch = " << ckpt.epoch << "\n";
  for (const auto& [k, v] : ckpt.config.entries()) head << "model." << k << " = " << v << "\n";
  head << "adam.lr = " << g17(ckpt.adam.lr) << "\n";
  head << "adam.beta1 = " << g17(ckpt.adam.beta1) << "\n";
  head << "adam.beta2 = " << g17(ckpt.adam.beta2) << "\n";
  head << "adam.eps = " << g17(ckpt.adam.eps) << "\n";
  head << "adam.t = " << ckpt.adam.t << "\n";
  if (ckpt.validation) {
    for (const auto& [k, v] : ckpt.validation->entries()) head << "val." << k << " = " << v << "\n";
  }

  std::vector<std::pair<std::string, const float*>> blobs;
  std::vector<IndexEntry> index;
  std::uint64_t offset = 0;
  auto add = [&](const std::string& name, const Shape& shape, const float* data) {
    const auto count = static_cast<std::uint64_t>(shape.numel());
    index.push_back({name, shape, offset, count});
    blobs.emplace_back(name, data);
    offset += count * sizeof(float);
  };
  std::map<std::string, Shape> shapes;
  for (const auto& p : ckpt.parameters) {
    if (p.name.find_first_of(" \t\n") != std::string::npos) throw ValueError("parameter name contains whitespace: " + p.name);
    add("param:" + p.name, p.tensor.shape(), p.tensor.ptr());
    shapes.emplace(p.name, p.tensor.shape());
  }
  for (std::size_t i = 0; i < ckpt.adam.names.size(); ++i) {
    const auto it = shapes.find(ckpt.adam.names[i]);
    if (it == shapes.end() || static_cast<std::size_t>(it->second.numel()) != ckpt.adam.m[i].size()) {
      throw ValueError("Adam state entry " + ckpt.adam.names[i] + " does not match a parameter");
    }
    add("adam.m:" + ckpt.adam.names[i], it->second, ckpt.adam.m[i].data());
    add("adam.v:" + ckpt.adam.names[i], it->second, ckpt.adam.v[i].data());
  }
  head << "index " << index.size() << "\n";
  for (const auto& e : index) head << e.name << " " << shape_text(e.shape) << " " << e.offset << " " << e.count << "\n";
  head << "payload " << offset << "\n";

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  const std::string h = head.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (std::size_t i = 0; i < index.size(); ++i) {
    out.write(reinterpret_cast<const char*>(blobs[i].second), static_cast<std::streamsize>(index[i].count * sizeof(float)));
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string where = "checkpoint " + path.string() + ": ";
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw CorruptIndexError(where + "missing '" + kMagic + "' header");

  std::map<std::string, std::string> header;
  std::vector<std::pair<std::string, std::string>> val_entries;
  std::size_t count = 0;
  try {
    while (true) {
      if (!std::getline(in, line)) throw CorruptIndexError(where + "header ends before the index");
      if (line.rfind("index ", 0) == 0) {
        count = text::parse_uint(line.substr(6), "index count");
        break;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw CorruptIndexError(where + "malformed header line '" + line + "'");
      const std::string key = text::trim(line.substr(0, eq));
      const std::string value = text::trim(line.substr(eq + 1));
      if (key.rfind("val.", 0) == 0) val_entries.emplace_back(key.substr(4), value);
      else header[key] = value;
    }
  } catch (const ValueError& e) {
    throw CorruptIndexError(where + e.what());
  }

  std::vector<IndexEntry> index;
  std::uint64_t declared = 0;
  try {
    std::uint64_t expected_offset = 0;
    for (std::size_t i = 0; i < count; ++i) {
      if (!std::getline(in, line)) throw CorruptIndexError(where + "index truncated");
      std::istringstream row(line);
      std::string name, shape, offset, n, extra;
      if (!(row >> name >> shape >> offset >> n) || (row >> extra)) {
        throw CorruptIndexError(where + "malformed index row '" + line + "'");
      }
      IndexEntry e{name, parse_shape(shape), text::parse_uint(offset, "offset"), text::parse_uint(n, "count")};
      if (e.count != static_cast<std::uint64_t>(e.shape.numel())) {
        throw CorruptIndexError(where + "element count of " + name + " disagrees with its shape");
      }
      if (e.offset != expected_offset) throw CorruptIndexError(where + "offset of " + name + " is not contiguous");
      expected_offset += e.count * sizeof(float);
      index.push_back(std::move(e));
    }
    if (!std::getline(in, line) || line.rfind("payload ", 0) != 0) {
      throw CorruptIndexError(where + "missing payload line after the index");
    }
    declared = text::parse_uint(line.substr(8), "payload size");
    if (declared != expected_offset) {
      throw CorruptIndexError(where + "payload line declares " + std::to_string(declared) + " bytes, index describes " +
                              std::to_string(expected_offset));
    }
  } catch (const ValueError& e) {
    throw CorruptIndexError(where + e.what());
  }

  const auto start = in.tellg();
  in.seekg(0, std::ios::end);
  const auto available = static_cast<std::uint64_t>(in.tellg() - start);
  if (available != declared) {
    throw PayloadSizeError(where + "payload size mismatch: expected " + std::to_string(declared) + " bytes, found " +
                           std::to_string(available));
  }
  in.seekg(start);

  Checkpoint c;
  auto need = [&](const std::string& key) -> const std::string& {
    const auto it = header.find(key);
    if (it == header.end()) throw CorruptIndexError(where + "header lacks '" + key + "'");
    return it->second;
  };
  try {
    for (const auto& [k, v] : header) {
      if (k.rfind("model.", 0) == 0 && !c.config.set_entry(k.substr(6), v)) {
        throw CorruptIndexError(where + "unknown model key '" + k + "'");
      }
    }
    c.config.validate();
  } catch (const ValueError& e) {
    throw CorruptIndexError(where + e.what());
  }
  {
    const std::string& hex = need("fingerprint");
    const auto [p, ec] = std::from_chars(hex.data(), hex.data() + hex.size(), c.fingerprint, 16);
    if (ec != std::errc() || p != hex.data() + hex.size() || hex.size() != 16) {
      throw CorruptIndexError(where + "malformed fingerprint '" + hex + "'");
    }
  }
  if (c.fingerprint != c.config.fingerprint()) {
    throw CorruptIndexError(where + "stored fingerprint does not match the stored model configuration");
  }
  try {
    c.epoch = static_cast<int>(text::parse_int(need("epoch"), "epoch"));
    c.adam.lr = text::parse_double(need("adam.lr"), "adam.lr");
    c.adam.beta1 = text::parse_double(need("adam.beta1"), "adam.beta1");
    c.adam.beta2 = text::parse_double(need("adam.beta2"), "adam.beta2");
    c.adam.eps = text::parse_double(need("adam.eps"), "adam.eps");
    c.adam.t = static_cast<long>(text::parse_int(need("adam.t"), "adam.t"));
    if (!val_entries.empty()) {
      std::string kv;
      for (const auto& [k, v] : val_entries) kv += k + " = " + v + "\n";
      c.validation = parse_eval_report(kv);
    }
  } catch (const CheckpointError&) {
    throw;
  } catch (const Error& e) {
    throw CorruptIndexError(where + e.what());
  }

  std::map<std::string, std::size_t> param_slot;
  for (const auto& e : index) {
    std::vector<float> values(e.count);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(e.count * sizeof(float)));
    if (!in) throw PayloadSizeError(where + "payload ended inside " + e.name);
    const auto colon = e.name.find(':');
    const std::string kind = e.name.substr(0, colon == std::string::npos ? 0 : colon);
    const std::string name = colon == std::string::npos ? std::string() : e.name.substr(colon + 1);
    if (kind == "param") {
      param_slot[name] = c.parameters.size();
      c.parameters.push_back({name, Tensor<float>(e.shape, std::move(values))});
    } else if (kind == "adam.m") {
      c.adam.names.push_back(name);
      c.adam.m.push_back(std::move(values));
    } else if (kind == "adam.v") {
      if (c.adam.names.empty() || c.adam.names.back() != name) {
        throw CorruptIndexError(where + "adam.v:" + name + " is not preceded by its first moment");
      }
      c.adam.v.push_back(std::move(values));
    } else {
      throw CorruptIndexError(where + "unknown index entry '" + e.name + "'");
    }
  }
  for (const auto& n : c.adam.names) {
    if (!param_slot.count(n)) throw CorruptIndexError(where + "Adam state for unknown parameter " + n);
  }
  try {
    c.adam.validate();
  } catch (const ValueError& e) {
    throw CorruptIndexError(where + e.what());
  }
  return c;
}

void restore_parameters(const Checkpoint& ckpt, UPetModel<float>& model) {
  if (ckpt.fingerprint != model.config().fingerprint()) {
    throw FingerprintMismatchError("checkpoint fingerprint " + fingerprint_hex(ckpt.fingerprint) +
                                   " does not match model fingerprint " + fingerprint_hex(model.config().fingerprint()));
  }
  std::map<std::string, const Tensor<float>*> stored;
  for (const auto& p : ckpt.parameters) stored[p.name] = &p.tensor;
  if (stored.size() != model.parameters().size()) {
    throw CheckpointShapeError("checkpoint holds " + std::to_string(stored.size()) + " parameters, model has " +
                               std::to_string(model.parameters().size()));
  }
  for (auto& p : model.parameters()) {
    const auto it = stored.find(p.name);
    if (it == stored.end()) throw CheckpointShapeError("checkpoint lacks parameter " + p.name);
    if (it->second->shape() != p.tensor.shape()) {
      throw CheckpointShapeError("parameter " + p.name + " has shape " + it->second->shape().str() + " in the checkpoint, " +
                                 p.tensor.shape().str() + " in the model");
    }
  }
  for (auto& p : model.parameters()) {
    const auto src = stored[p.name]->data();
    std::copy(src.begin(), src.end(), p.tensor.data().begin());
  }
}

UPetModel<float> model_from_checkpoint(const Checkpoint& ckpt) {
  UPetModel<float> m(ckpt.config, 0);
  restore_parameters(ckpt, m);
  return m;
}

}  // namespace upet
