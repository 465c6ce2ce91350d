#include "secp/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "wire.hpp"

namespace secp {

const std::array<std::string, 14>& label_names() {
  static const std::array<std::string, 14> names = {
      "background",       "eye_L",           "eye_R",         "temporal_lobe_L",
      "temporal_lobe_R",  "mandible_L",      "mandible_R",    "brainstem",
      "parotid_L",        "parotid_R",       "spinal_cord",   "submandibular_L",
      "submandibular_R",  "thyroid"};
  return names;
}

namespace {

struct OrganTemplate {
  int label;
  bool capsule;      // capsule: segment (cx,cy)-(ex,ey) with radius rx
  double cx, cy;
  double ex, ey;
  double rx, ry;
  double presence;   // per-slice probability
  double intensity;
};

// Normalized coordinates, x left-to-right, y top-to-bottom. Bilateral pairs
// are mirrored about x = 0.5. Temporal lobes and mandibles are the large
// structures; eyes, submandibular glands and thyroid stay small, the spinal
// cord is a small central disc.
const std::vector<OrganTemplate>& organ_templates() {
  static const std::vector<OrganTemplate> organs = {
      {1, false, 0.34, 0.24, 0, 0, 0.040, 0.034, 0.75, 0.85},   // eye_L
      {3, false, 0.245, 0.44, 0, 0, 0.105, 0.140, 1.00, 0.55},  // temporal_lobe_L
      {5, true, 0.24, 0.62, 0.36, 0.79, 0.045, 0, 1.00, 0.95},  // mandible_L
      {7, false, 0.50, 0.47, 0, 0, 0.052, 0.068, 1.00, 0.62},   // brainstem
      {8, false, 0.20, 0.60, 0, 0, 0.055, 0.070, 0.85, 0.70},   // parotid_L
      {10, false, 0.50, 0.70, 0, 0, 0.030, 0.030, 1.00, 0.78},  // spinal_cord
      {11, false, 0.40, 0.82, 0, 0, 0.038, 0.030, 0.70, 0.66},  // submandibular_L
      {13, false, 0.50, 0.90, 0, 0, 0.050, 0.028, 0.70, 0.88},  // thyroid
  };
  return organs;
}

OrganTemplate mirrored(const OrganTemplate& o) {
  OrganTemplate m = o;
  m.label = o.label + 1;
  m.cx = 1.0 - o.cx;
  m.ex = 1.0 - o.ex;
  return m;
}

bool is_bilateral(int label) {
  return label == 1 || label == 2 || label == 3 || label == 4 || label == 5 || label == 6 ||
         label == 8 || label == 9 || label == 11 || label == 12;
}

struct PlacedOrgan {
  OrganTemplate shape;
  bool present;
};

bool inside(const OrganTemplate& o, double x, double y) {
  if (!o.capsule) {
    const double dx = (x - o.cx) / o.rx;
    const double dy = (y - o.cy) / o.ry;
    return dx * dx + dy * dy <= 1.0;
  }
  // distance from point to the segment (cx,cy)-(ex,ey)
  const double vx = o.ex - o.cx, vy = o.ey - o.cy;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((x - o.cx) * vx + (y - o.cy) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = x - (o.cx + t * vx);
  const double dy = y - (o.cy + t * vy);
  return dx * dx + dy * dy <= o.rx * o.rx;
}

}  // namespace

std::vector<Sample> generate_phantom(std::uint64_t seed, int n_patients, int slices_per_patient,
                                     int size) {
  if (size < 16 || size % 16 != 0) {
    throw ConfigError("phantom size must be a positive multiple of 16, got " +
                      std::to_string(size));
  }
  if (n_patients < 1 || slices_per_patient < 1) {
    throw ConfigError("phantom needs at least one patient and one slice");
  }

  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n_patients) * slices_per_patient);

  for (int p = 0; p < n_patients; ++p) {
    char pid[16];
    std::snprintf(pid, sizeof pid, "p%03d", p);

    // per-patient anatomy jitter, fixed across that patient's slices
    Rng prng(mix_seed(seed, static_cast<std::uint64_t>(p) + 1));
    std::vector<OrganTemplate> anatomy;
    for (const OrganTemplate& base : organ_templates()) {
      OrganTemplate o = base;
      o.cx += prng.uniform(-0.015, 0.015);
      o.cy += prng.uniform(-0.015, 0.015);
      if (o.capsule) {
        o.ex += prng.uniform(-0.015, 0.015);
        o.ey += prng.uniform(-0.015, 0.015);
        o.rx *= prng.uniform(0.9, 1.1);
      } else {
        o.rx *= prng.uniform(0.9, 1.1);
        o.ry *= prng.uniform(0.9, 1.1);
      }
      anatomy.push_back(o);
      if (is_bilateral(o.label)) anatomy.push_back(mirrored(o));
    }
    std::sort(anatomy.begin(), anatomy.end(),
              [](const OrganTemplate& a, const OrganTemplate& b) { return a.label < b.label; });

    for (int s = 0; s < slices_per_patient; ++s) {
      Rng srng(mix_seed(seed, static_cast<std::uint64_t>(p) + 1, static_cast<std::uint64_t>(s) + 1));
      std::vector<PlacedOrgan> placed;
      for (const OrganTemplate& a : anatomy) {
        OrganTemplate o = a;
        o.cx += srng.uniform(-0.008, 0.008);
        o.cy += srng.uniform(-0.008, 0.008);
        if (o.capsule) {
          o.ex += srng.uniform(-0.008, 0.008);
          o.ey += srng.uniform(-0.008, 0.008);
          o.rx *= srng.uniform(0.95, 1.05);
        } else {
          o.rx *= srng.uniform(0.95, 1.05);
          o.ry *= srng.uniform(0.95, 1.05);
        }
        placed.push_back({o, srng.bernoulli(a.presence)});
      }

      Sample sample;
      sample.patient_id = pid;
      sample.id = std::string(pid) + "_s" + std::to_string(s);
      sample.image = Tensor<float>::zeros({1, size, size});
      sample.mask = Mask({size, size});

      const OrganTemplate head{0, false, 0.5, 0.52, 0, 0, 0.40, 0.44, 1.0, 0.30};
      auto img = sample.image.data();
      for (int i = 0; i < size; ++i) {
        const double y = (i + 0.5) / size;
        for (int j = 0; j < size; ++j) {
          const double x = (j + 0.5) / size;
          double intensity = 0.10;
          int label = 0;
          if (inside(head, x, y)) intensity = head.intensity;
          for (const PlacedOrgan& po : placed) {
            if (po.present && inside(po.shape, x, y)) {
              label = po.shape.label;
              intensity = po.shape.intensity;
            }
          }
          sample.mask.at(i, j) = static_cast<std::uint8_t>(label);
          img[static_cast<std::size_t>(i) * size + j] = static_cast<float>(intensity);
        }
      }
      // seeded noise in a separate pass so geometry and texture streams stay
      // independent
      for (std::size_t i = 0; i < sample.image.size(); ++i) {
        const double noisy = img[i] + srng.uniform(-0.03, 0.03);
        img[i] = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
      }
      out.push_back(std::move(sample));
    }
  }
  return out;
}

namespace {

Tensor<float> pad_to_square(const Tensor<float>& image) {
  const int H = image.dim(1), W = image.dim(2);
  if (H == W) return image;
  const int side = std::max(H, W);
  auto padded = Tensor<float>::zeros({1, side, side});
  const int oy = (side - H) / 2, ox = (side - W) / 2;
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) padded.at(0, oy + i, ox + j) = image.at(0, i, j);
  return padded;
}

Mask pad_to_square(const Mask& mask) {
  const int H = mask.shape[0], W = mask.shape[1];
  if (H == W) return mask;
  const int side = std::max(H, W);
  Mask padded({side, side});
  const int oy = (side - H) / 2, ox = (side - W) / 2;
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) padded.at(oy + i, ox + j) = mask.at(i, j);
  return padded;
}

}  // namespace

Sample resize_to(const Sample& s, int target) {
  if (target < 1) throw ConfigError("resize target must be positive");
  if (s.image.dim(1) != s.mask.shape[0] || s.image.dim(2) != s.mask.shape[1]) {
    throw ConfigError("sample image and mask extents differ");
  }
  Sample out;
  out.patient_id = s.patient_id;
  out.id = s.id;
  const Tensor<float> img = pad_to_square(s.image);
  const Mask msk = pad_to_square(s.mask);
  const int side = img.dim(1);
  if (side == target) {
    out.image = img;
    out.mask = msk;
    return out;
  }

  const auto ax = detail::bilinear_axis(side, target);
  // rows, then columns
  std::vector<float> tmp(static_cast<std::size_t>(side) * target);
  for (int i = 0; i < side; ++i)
    for (int o = 0; o < target; ++o)
      tmp[static_cast<std::size_t>(i) * target + o] =
          static_cast<float>(ax.w_lo[o] * img.at(0, i, ax.lo[o]) + ax.w_hi[o] * img.at(0, i, ax.hi[o]));
  out.image = Tensor<float>::zeros({1, target, target});
  for (int o = 0; o < target; ++o)
    for (int j = 0; j < target; ++j)
      out.image.at(0, o, j) =
          static_cast<float>(ax.w_lo[o] * tmp[static_cast<std::size_t>(ax.lo[o]) * target + j] +
                             ax.w_hi[o] * tmp[static_cast<std::size_t>(ax.hi[o]) * target + j]);

  out.mask = Mask({target, target});
  for (int i = 0; i < target; ++i) {
    const int si = std::min(side - 1, static_cast<int>((i + 0.5) * side / target));
    for (int j = 0; j < target; ++j) {
      const int sj = std::min(side - 1, static_cast<int>((j + 0.5) * side / target));
      out.mask.at(i, j) = msk.at(si, sj);
    }
  }
  return out;
}

int FoldSplit::fold_of(const std::string& patient) const {
  auto it = assignment.find(patient);
  if (it == assignment.end()) throw UsageError("patient '" + patient + "' has no fold");
  return it->second;
}

std::vector<int> FoldSplit::fold_sizes() const {
  std::vector<int> sizes(static_cast<std::size_t>(k), 0);
  for (const auto& [_, f] : assignment) ++sizes[static_cast<std::size_t>(f)];
  return sizes;
}

FoldSplit split_folds(const std::vector<std::string>& ids, int k, std::uint64_t seed) {
  std::vector<std::string> unique;
  for (const std::string& id : ids)
    if (std::find(unique.begin(), unique.end(), id) == unique.end()) unique.push_back(id);
  if (k < 1 || static_cast<std::size_t>(k) > unique.size()) {
    throw ConfigError("cannot split " + std::to_string(unique.size()) + " patients into " +
                      std::to_string(k) + " folds");
  }
  Rng rng(mix_seed(seed, 0xf01d));
  rng.shuffle(unique);
  FoldSplit split;
  split.k = k;
  for (std::size_t i = 0; i < unique.size(); ++i)
    split.assignment[unique[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
  return split;
}

std::vector<std::string> patient_ids(const std::vector<Sample>& samples) {
  std::vector<std::string> ids;
  for (const Sample& s : samples)
    if (std::find(ids.begin(), ids.end(), s.patient_id) == ids.end()) ids.push_back(s.patient_id);
  return ids;
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

namespace {

constexpr char kImgMagic[] = "SECPIMG";
constexpr std::uint8_t kImgVersion = 1;

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(in.tellg()));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw Error("short read from '" + path.string() + "'");
  return bytes;
}

void write_all(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to '" + path.string() + "'");
}

wire::Reader open_sample_file(const std::vector<std::uint8_t>& bytes, std::uint8_t want_kind,
                              const std::string& what) {
  wire::Reader r(bytes, what);
  if (r.str(7) != kImgMagic) r.fail("bad magic, expected SECPIMG");
  const std::uint8_t version = r.u8();
  if (version != kImgVersion) r.fail("unsupported version " + std::to_string(version));
  const std::uint8_t kind = r.u8();
  if (kind != want_kind) {
    r.fail("kind " + std::to_string(kind) + ", expected " + std::to_string(want_kind));
  }
  return r;
}

}  // namespace

void save_image_file(const std::filesystem::path& path, const Tensor<float>& image) {
  if (image.ndim() != 3 || image.dim(0) != 1) {
    throw ConfigError("image must be [1,H,W], got " + shape_str(image.shape()));
  }
  wire::Writer w;
  w.bytes(kImgMagic, 7);
  w.u8(kImgVersion);
  w.u8(0);
  w.u32(static_cast<std::uint32_t>(image.dim(1)));
  w.u32(static_cast<std::uint32_t>(image.dim(2)));
  for (float v : image.data()) w.f32(v);
  write_all(path, w.take());
}

Tensor<float> load_image_file(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  wire::Reader r = open_sample_file(bytes, 0, "image '" + path.string() + "'");
  const int H = static_cast<int>(r.u32());
  const int W = static_cast<int>(r.u32());
  if (H < 1 || W < 1) r.fail("invalid extents");
  auto image = Tensor<float>::zeros({1, H, W});
  for (float& v : image.data()) v = r.f32();
  r.expect_end();
  return image;
}

void save_mask_file(const std::filesystem::path& path, const Mask& mask) {
  if (mask.shape.size() != 2) throw ConfigError("mask must be [H,W]");
  wire::Writer w;
  w.bytes(kImgMagic, 7);
  w.u8(kImgVersion);
  w.u8(1);
  w.u32(static_cast<std::uint32_t>(mask.shape[0]));
  w.u32(static_cast<std::uint32_t>(mask.shape[1]));
  w.bytes(mask.v.data(), mask.v.size());
  write_all(path, w.take());
}

Mask load_mask_file(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  wire::Reader r = open_sample_file(bytes, 1, "mask '" + path.string() + "'");
  const int H = static_cast<int>(r.u32());
  const int W = static_cast<int>(r.u32());
  if (H < 1 || W < 1) r.fail("invalid extents");
  Mask mask({H, W});
  r.raw(mask.v.data(), mask.v.size());
  r.expect_end();
  for (std::size_t i = 0; i < mask.v.size(); ++i) {
    if (mask.v[i] >= kNumLabels) {
      throw DataError("mask '" + path.string() + "': value " + std::to_string(mask.v[i]) +
                      " at pixel " + std::to_string(i) + " exceeds label range 0..13");
    }
  }
  return mask;
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  nlohmann::json j;
  j["labels"] = manifest.labels;
  j["samples"] = nlohmann::json::array();
  for (const ManifestEntry& e : manifest.samples) {
    j["samples"].push_back({{"id", e.id},
                            {"patient", e.patient},
                            {"image_path", e.image_path},
                            {"mask_path", e.mask_path}});
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest '" + path.string() + "': " + e.what());
  }
  DatasetManifest m;
  try {
    m.labels = j.at("labels").get<std::vector<std::string>>();
    for (const auto& je : j.at("samples")) {
      m.samples.push_back({je.at("id").get<std::string>(), je.at("patient").get<std::string>(),
                           je.at("image_path").get<std::string>(),
                           je.at("mask_path").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest '" + path.string() + "': " + e.what());
  }
  if (m.labels.size() != kNumLabels || m.labels[0] != "background") {
    throw FormatError("manifest '" + path.string() + "' must list 14 labels starting with background");
  }
  return m;
}

void save_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  DatasetManifest manifest;
  manifest.labels.assign(label_names().begin(), label_names().end());
  for (const Sample& s : samples) {
    ManifestEntry e;
    e.id = s.id;
    e.patient = s.patient_id;
    e.image_path = "images/" + s.id + ".img";
    e.mask_path = "masks/" + s.id + ".msk";
    save_image_file(dir / e.image_path, s.image);
    save_mask_file(dir / e.mask_path, s.mask);
    manifest.samples.push_back(std::move(e));
  }
  save_manifest(dir / "manifest.json", manifest);
}

std::vector<Sample> load_dataset(const std::filesystem::path& manifest_path) {
  const DatasetManifest manifest = load_manifest(manifest_path);
  const std::filesystem::path base = manifest_path.parent_path();
  std::vector<Sample> samples;
  samples.reserve(manifest.samples.size());
  for (const ManifestEntry& e : manifest.samples) {
    Sample s;
    s.id = e.id;
    s.patient_id = e.patient;
    s.image = load_image_file(base / e.image_path);
    s.mask = load_mask_file(base / e.mask_path);
    if (s.image.dim(1) != s.mask.shape[0] || s.image.dim(2) != s.mask.shape[1]) {
      throw DataError("sample '" + e.id + "': image and mask extents differ");
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace secp
