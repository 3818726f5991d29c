#include "upet/data/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "upet/core/errors.hpp"

namespace upet {

namespace {

constexpr const char* kHeader = "subject_id,session_id,mri_path,pet_path,label";

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

std::string to_string(Diagnosis d) {
  switch (d) {
    case Diagnosis::CN:
      return "CN";
    case Diagnosis::MCI:
      return "MCI";
    case Diagnosis::AD:
      return "AD";
  }
  return "?";
}

Diagnosis parse_diagnosis(const std::string& text) {
  if (text == "CN") return Diagnosis::CN;
  if (text == "MCI") return Diagnosis::MCI;
  if (text == "AD") return Diagnosis::AD;
  throw FormatError("unknown diagnosis label '" + text + "' (expected CN, MCI or AD)");
}

Diagnosis diagnosis_from_index(int index) {
  if (index < 0 || index >= kNumClasses) throw ValueError("class index out of range: " + std::to_string(index));
  return static_cast<Diagnosis>(index);
}

std::filesystem::path Manifest::resolve(const std::string& path) const {
  std::filesystem::path p(path);
  return p.is_absolute() ? p : base_dir / p;
}

std::vector<std::string> Manifest::subjects() const {
  std::set<std::string> ids;
  for (const auto& r : records) ids.insert(r.subject_id);
  return {ids.begin(), ids.end()};
}

void Manifest::validate() const {
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& r : records) {
    if (r.subject_id.empty() || r.session_id.empty() || r.mri_path.empty()) {
      throw FormatError("manifest record with empty subject, session or MRI path");
    }
    if (!seen.emplace(r.subject_id, r.session_id).second) {
      throw FormatError("duplicate manifest record " + r.subject_id + "/" + r.session_id);
    }
  }
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& csv_path) {
  manifest.validate();
  if (csv_path.has_parent_path()) std::filesystem::create_directories(csv_path.parent_path());
  std::ofstream out(csv_path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + csv_path.string());
  out << kHeader << "\n";
  for (const auto& r : manifest.records) {
    for (const std::string* f : {&r.subject_id, &r.session_id, &r.mri_path, &r.pet_path}) {
      if (f->find_first_of(",\n\r") != std::string::npos) throw ValueError("manifest field contains a separator: " + *f);
    }
    out << r.subject_id << ',' << r.session_id << ',' << r.mri_path << ',' << r.pet_path << ','
        << to_string(r.label) << "\n";
  }
  if (!out) throw IoError("failed writing manifest " + csv_path.string());
}

Manifest read_manifest(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open manifest " + csv_path.string());
  Manifest m;
  m.base_dir = csv_path.parent_path();
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty manifest " + csv_path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHeader) throw FormatError("manifest header must be '" + std::string(kHeader) + "', got '" + line + "'");
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 5) {
      throw FormatError("manifest line " + std::to_string(line_no) + " has " + std::to_string(f.size()) +
                        " fields, expected 5");
    }
    m.records.push_back(SampleRecord{f[0], f[1], f[2], f[3], parse_diagnosis(f[4])});
  }
  m.validate();
  return m;
}

}  // namespace upet
