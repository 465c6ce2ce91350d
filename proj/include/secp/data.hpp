#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "secp/tensor.hpp"

namespace secp {

/// Label order is fixed: background first, then the 13 organs.
const std::array<std::string, 14>& label_names();
constexpr int kNumLabels = 14;

struct Sample {
  Tensor<float> image;  // [1,H,W], values in [0,1]
  Mask mask;            // [H,W], values 0..13
  std::string patient_id;
  std::string id;
};

/// Deterministic multi-organ phantom set: per-slice ellipses and capsules
/// with mirrored bilateral pairs, organ-specific intensities plus seeded
/// noise, and realistic relative sizes. Some organs are absent from some
/// slices. `size` must be divisible by 16.
std::vector<Sample> generate_phantom(std::uint64_t seed, int n_patients, int slices_per_patient,
                                     int size);

/// Pads to square (centered, zeros), then resizes: image bilinearly, mask
/// nearest-neighbor so labels stay integral.
Sample resize_to(const Sample& s, int target);

/// Patient-level k-fold partition; fold sizes differ by at most one.
struct FoldSplit {
  int k = 0;
  std::map<std::string, int> assignment;  // patient id -> fold

  int fold_of(const std::string& patient) const;
  std::vector<int> fold_sizes() const;
};

FoldSplit split_folds(const std::vector<std::string>& patient_ids, int k, std::uint64_t seed);

/// Patient ids in first-appearance order.
std::vector<std::string> patient_ids(const std::vector<Sample>& samples);

// Sample file, little-endian: magic "SECPIMG", u8 version=1, u8 kind
// (0 = image f32, 1 = mask u8), u32 H, u32 W, payload row-major.
void save_image_file(const std::filesystem::path& path, const Tensor<float>& image);
void save_mask_file(const std::filesystem::path& path, const Mask& mask);
Tensor<float> load_image_file(const std::filesystem::path& path);
Mask load_mask_file(const std::filesystem::path& path);

/// Dataset manifest: JSON with the 14 label names and one entry per sample;
/// paths are relative to the manifest's directory.
struct ManifestEntry {
  std::string id;
  std::string patient;
  std::string image_path;
  std::string mask_path;
};

struct DatasetManifest {
  std::vector<std::string> labels;
  std::vector<ManifestEntry> samples;
};

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Writes images/, masks/ and manifest.json under `dir`.
void save_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir);
std::vector<Sample> load_dataset(const std::filesystem::path& manifest_path);

}  // namespace secp
