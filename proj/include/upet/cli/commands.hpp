#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "upet/data/volume.hpp"

namespace upet {

/// Process exit codes of the `upet` tool. Values are stable.
enum class ExitCode : int {
  Ok = 0,
  Internal = 1,          // unexpected failure
  Usage = 2,             // bad command line
  Config = 3,            // unknown key or invalid configuration value
  Io = 4,                // missing / unreadable / unwritable file
  DataFormat = 5,        // malformed volume, manifest or splits file
  Checkpoint = 6,        // corrupt index, payload size or shape mismatch
  Fingerprint = 7,       // checkpoint built for another architecture
  NoAttention = 8,       // attention requested from a model without gates
  NonFiniteLoss = 9,     // training diverged
  GradCheckFailed = 10,  // at least one gradient-check row failed
  PrecisionRefused = 11, // gradient check requested in 32-bit
  InvalidPhantom = 12,   // phantom configuration cannot be rendered
};

/// Runs `upet <args...>` (args exclude the program name). Normal output goes
/// to `out`, the single-line diagnostic of a failure to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Writes the axial, coronal and sagittal mid-slices of `v` as binary
/// portable graymaps `<prefix>_{axial,coronal,sagittal}.pgm`, mapping
/// [lo, hi] linearly onto 0..255. Returns the written paths.
std::vector<std::filesystem::path> write_mid_slices(const Volume& v, const std::filesystem::path& prefix,
                                                    float lo = 0.0f, float hi = 1.0f);

}  // namespace upet
