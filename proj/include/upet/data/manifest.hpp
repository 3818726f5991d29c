#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace upet {

/// Class indices used by the classifier: CN=0, MCI=1, AD=2.
enum class Diagnosis : int { CN = 0, MCI = 1, AD = 2 };
inline constexpr int kNumClasses = 3;

std::string to_string(Diagnosis d);
Diagnosis parse_diagnosis(const std::string& text);
Diagnosis diagnosis_from_index(int index);

struct SampleRecord {
  std::string subject_id;
  std::string session_id;
  std::string mri_path;
  std::string pet_path;  // empty = no paired PET
  Diagnosis label = Diagnosis::CN;

  bool paired() const { return !pet_path.empty(); }
};

/// Ordered list of studies. Relative paths are resolved against `base_dir`,
/// the directory that holds the manifest file.
struct Manifest {
  std::vector<SampleRecord> records;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& path) const;
  /// Sorted, de-duplicated subject ids.
  std::vector<std::string> subjects() const;
  /// Throws FormatError on duplicate (subject_id, session_id) pairs or empty ids.
  void validate() const;
};

/// CSV with header subject_id,session_id,mri_path,pet_path,label.
void write_manifest(const Manifest& manifest, const std::filesystem::path& csv_path);
Manifest read_manifest(const std::filesystem::path& csv_path);

}  // namespace upet
