#include "tdist/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "tdist/binary_io.hpp"

namespace tdist {

namespace fs = std::filesystem;

std::string to_string(Split s) {
  switch (s) {
    case Split::FeatureTrain: return "feature_train";
    case Split::KnnTrain: return "knn_train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "unknown";
}

Split split_from_string(const std::string& s) {
  if (s == "feature_train") return Split::FeatureTrain;
  if (s == "knn_train") return Split::KnnTrain;
  if (s == "validation") return Split::Validation;
  if (s == "test") return Split::Test;
  throw std::runtime_error("unknown split tag: " + s);
}

void SyntheticSpec::validate() const {
  require(image_size >= 8, "image_size must be at least 8 pixels");
  require(n_identities >= 1, "need at least one identity");
  require(n_classes >= 1, "need at least one class");
  require(n_identities >= n_classes, "need at least as many identities as classes");
  require(!transform_params.empty(), "transform parameter set must be nonempty");
}

namespace {

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

// Blob pattern for one identity. The class picks the blob count (3..6) and
// ring radius; the identity adds phase, radius and width jitter.
MatrixXd render_base(int image_size, int class_id, std::mt19937_64& rng) {
  const double s = image_size;
  const double center = (s - 1.0) / 2.0;
  const int count = 3 + class_id % 4;
  const double ring = s * (0.18 + 0.07 * ((class_id / 4) % 2));

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double phase = 2.0 * M_PI * unif(rng);

  struct Blob {
    double row, col, sigma, amp;
  };
  std::vector<Blob> blobs(count);
  for (int k = 0; k < count; ++k) {
    const double angle = phase + 2.0 * M_PI * (k + 0.35 * (unif(rng) - 0.5)) / count;
    const double radius = ring * (0.8 + 0.4 * unif(rng));
    blobs[k].row = center + radius * std::sin(angle);
    blobs[k].col = center + radius * std::cos(angle);
    blobs[k].sigma = s * (0.07 + 0.04 * unif(rng));
    blobs[k].amp = 0.55 + 0.45 * unif(rng);
  }

  MatrixXd base = MatrixXd::Zero(image_size, image_size);
  for (int y = 0; y < image_size; ++y)
    for (int x = 0; x < image_size; ++x) {
      double v = 0.0;
      for (const auto& b : blobs) {
        const double dy = y - b.row;
        const double dx = x - b.col;
        v += b.amp * std::exp(-(dy * dy + dx * dx) / (2.0 * b.sigma * b.sigma));
      }
      base(y, x) = v;
    }

  const double peak = base.maxCoeff();
  if (peak > 0.0) base /= peak;
  return base.unaryExpr([](double v) { return quantize(v); });
}

MatrixXd render_transformed(const MatrixXd& base, TransformKind kind, double param) {
  const int s = static_cast<int>(base.rows());
  const double center = (s - 1.0) / 2.0;
  MatrixXd out(s, s);
  if (kind == TransformKind::Rotation) {
    const double rad = param * M_PI / 180.0;
    const double c = std::cos(rad), sn = std::sin(rad);
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        const double dy = y - center, dx = x - center;
        out(y, x) = bilinear_sample(base, center + c * dy + sn * dx, center - sn * dy + c * dx);
      }
  } else {
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) out(y, x) = bilinear_sample(base, y, x - param);
  }
  return out.unaryExpr([](double v) { return quantize(v); });
}

std::map<int, std::vector<int>> group_by_identity(const LabeledDataset& ds) {
  std::map<int, std::vector<int>> groups;
  for (int i = 0; i < ds.size(); ++i) groups[ds.meta[i].identity].push_back(i);
  return groups;
}

// Removes and returns a uniformly chosen element.
int take_random(std::vector<int>& pool, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  const std::size_t at = pick(rng);
  const int chosen = pool[at];
  pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(at));
  return chosen;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  fields.push_back(cur);
  return fields;
}

MatrixXd bilinear_resize(const MatrixXd& in, int out_size) {
  const double row_ratio = static_cast<double>(in.rows()) / out_size;
  const double col_ratio = static_cast<double>(in.cols()) / out_size;
  MatrixXd out(out_size, out_size);
  for (int y = 0; y < out_size; ++y)
    for (int x = 0; x < out_size; ++x)
      out(y, x) = bilinear_sample(in, (y + 0.5) * row_ratio - 0.5, (x + 0.5) * col_ratio - 0.5);
  return out;
}

}  // namespace

LabeledDataset generate(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng = make_rng(spec.seed);

  std::vector<MatrixXd> bases(spec.n_identities);
  for (int id = 0; id < spec.n_identities; ++id)
    bases[id] = render_base(spec.image_size, id % spec.n_classes, rng);

  LabeledDataset ds;
  ds.height = ds.width = spec.image_size;
  ds.storage = PixelStorage::Pgm8;
  const int per_identity = static_cast<int>(spec.transform_params.size());
  ds.images.resize(static_cast<std::size_t>(spec.n_identities) * per_identity);
  ds.meta.resize(ds.images.size());

#pragma omp parallel for schedule(static)
  for (int i = 0; i < static_cast<int>(ds.images.size()); ++i) {
    const int id = i / per_identity;
    const double param = spec.transform_params[i % per_identity];
    ds.images[i] = to_vector(render_transformed(bases[id], spec.transform_kind, param));
    ds.meta[i] = {id, id % spec.n_classes, param, Split::KnnTrain};
  }
  return ds;
}

PairSet make_pairs(const LabeledDataset& ds, double max_delta, bool include_self) {
  require(ds.size() > 0, "make_pairs requires a nonempty dataset");
  require(max_delta >= 0.0, "max_delta must be nonnegative");

  PairSet out;
  out.max_delta = max_delta;
  out.include_self = include_self;
  for (const auto& [identity, idxs] : group_by_identity(ds)) {
    (void)identity;
    for (int i : idxs)
      for (int j : idxs) {
        if (i == j && !include_self) continue;
        if (std::abs(ds.meta[i].transform_param - ds.meta[j].transform_param) > max_delta)
          continue;
        out.pairs.emplace_back(i, j);
      }
  }
  return out;
}

LabeledDataset split_tfds1_style(LabeledDataset ds, std::uint64_t seed) {
  require(ds.size() > 0, "cannot split an empty dataset");
  auto groups = group_by_identity(ds);
  const bool feasible = std::any_of(groups.begin(), groups.end(),
                                    [](const auto& g) { return g.second.size() >= 2; });
  require(feasible, "dataset too small for the TFDs1-style protocol");

  std::mt19937_64 rng = make_rng(seed);
  for (auto& [identity, pool] : groups) {
    (void)identity;
    if (pool.size() == 1) {
      ds.meta[pool[0]].split = Split::FeatureTrain;
      continue;
    }
    ds.meta[take_random(pool, rng)].split = Split::Test;
    if (pool.size() >= 2) ds.meta[take_random(pool, rng)].split = Split::Validation;
    for (int i : pool) ds.meta[i].split = Split::KnnTrain;
  }
  return ds;
}

LabeledDataset split_tfds2_style(LabeledDataset ds, std::uint64_t seed) {
  require(ds.size() > 0, "cannot split an empty dataset");
  auto groups = group_by_identity(ds);
  const bool feasible = std::any_of(groups.begin(), groups.end(),
                                    [](const auto& g) { return g.second.size() >= 4; });
  require(feasible, "dataset too small for the TFDs2-style protocol");

  std::mt19937_64 rng = make_rng(seed);
  for (auto& [identity, pool] : groups) {
    (void)identity;
    if (pool.size() >= 4) {
      ds.meta[take_random(pool, rng)].split = Split::Test;
      ds.meta[take_random(pool, rng)].split = Split::Validation;
    }
    for (int i : pool) ds.meta[i].split = Split::KnnTrain;
  }
  return ds;
}

LabeledDataset filter_split(const LabeledDataset& ds, Split split) {
  LabeledDataset out;
  out.height = ds.height;
  out.width = ds.width;
  out.storage = ds.storage;
  for (int i = 0; i < ds.size(); ++i)
    if (ds.meta[i].split == split) {
      out.images.push_back(ds.images[i]);
      out.meta.push_back(ds.meta[i]);
    }
  return out;
}

void save_dataset(const LabeledDataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.csv");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir);
  manifest << "filename,identity,class,transform_param,split\n";

  const char* ext = ds.storage == PixelStorage::Pgm8 ? ".pgm" : ".f32";
  for (int i = 0; i < ds.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%05d%s", i, ext);
    const std::string path = (fs::path(dir) / name).string();
    const MatrixXd image = to_image(ds.images[i], ds.height, ds.width);
    if (ds.storage == PixelStorage::Pgm8)
      write_pgm(path, image);
    else
      write_float_raw(path, {image});

    manifest << name << ',' << ds.meta[i].identity << ',' << ds.meta[i].class_id << ','
             << format_double(ds.meta[i].transform_param) << ',' << to_string(ds.meta[i].split)
             << '\n';
  }
  if (!manifest) throw std::runtime_error("failed writing manifest in " + dir);
}

LabeledDataset load_dataset(const std::string& dir) {
  const fs::path manifest_path = fs::path(dir) / "manifest.csv";
  std::ifstream manifest(manifest_path);
  if (!manifest) throw std::runtime_error("cannot open manifest: " + manifest_path.string());

  std::string line;
  if (!std::getline(manifest, line))
    throw std::runtime_error("manifest parse error at line 1: empty file");
  const std::vector<std::string> header = split_csv_line(line);
  const std::vector<std::string> wanted = {"filename", "identity", "class", "transform_param",
                                           "split"};
  std::map<std::string, int> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = static_cast<int>(i);
  for (const auto& name : wanted)
    if (!col.count(name))
      throw std::runtime_error("manifest parse error at line 1: missing column '" + name + "'");

  LabeledDataset ds;
  int line_no = 1;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() < wanted.size())
      throw std::runtime_error("manifest parse error at line " + std::to_string(line_no) +
                               ": expected " + std::to_string(wanted.size()) + " fields, got " +
                               std::to_string(fields.size()));

    ImageMeta meta;
    std::string filename;
    try {
      filename = fields[col["filename"]];
      meta.identity = std::stoi(fields[col["identity"]]);
      meta.class_id = std::stoi(fields[col["class"]]);
      meta.transform_param = std::stod(fields[col["transform_param"]]);
      meta.split = split_from_string(fields[col["split"]]);
    } catch (const std::exception& e) {
      throw std::runtime_error("manifest parse error at line " + std::to_string(line_no) + ": " +
                               e.what());
    }

    const std::string path = (fs::path(dir) / filename).string();
    MatrixXd image;
    if (filename.ends_with(".pgm")) {
      image = read_pgm(path);
      if (ds.images.empty()) ds.storage = PixelStorage::Pgm8;
    } else if (filename.ends_with(".f32")) {
      const auto stack = read_float_raw(path);
      if (stack.size() != 1)
        throw std::runtime_error("expected a single image in " + path + ", found " +
                                 std::to_string(stack.size()));
      image = stack[0];
      if (ds.images.empty()) ds.storage = PixelStorage::FloatRaw;
    } else {
      throw std::runtime_error("unknown image extension in manifest line " +
                               std::to_string(line_no) + ": " + filename);
    }

    if (ds.images.empty()) {
      ds.height = static_cast<int>(image.rows());
      ds.width = static_cast<int>(image.cols());
    } else if (image.rows() != ds.height || image.cols() != ds.width) {
      throw std::runtime_error("inconsistent image size at manifest line " +
                               std::to_string(line_no));
    }
    ds.images.push_back(to_vector(image));
    ds.meta.push_back(meta);
  }
  return ds;
}

LabeledDataset preprocess(const LabeledDataset& ds, const LcnConfig& lcn_cfg, int downsample_to) {
  require(ds.size() > 0, "preprocess requires a nonempty dataset");
  require(downsample_to > 0, "downsample target must be positive");
  require(downsample_to <= ds.height && downsample_to <= ds.width,
          "downsample target must not exceed the source size");

  LabeledDataset out;
  out.height = out.width = downsample_to;
  out.storage = PixelStorage::FloatRaw;
  out.images.resize(ds.images.size());
  out.meta = ds.meta;

#pragma omp parallel for schedule(static)
  for (int i = 0; i < ds.size(); ++i) {
    MatrixXd image = to_image(ds.images[i], ds.height, ds.width);
    if (downsample_to != ds.height || downsample_to != ds.width)
      image = bilinear_resize(image, downsample_to);
    out.images[i] = to_vector(lcn(image, lcn_cfg));
  }
  return out;
}

void write_pgm(const std::string& path, const MatrixXd& image) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write PGM: " + path);
  os << "P5\n" << image.cols() << " " << image.rows() << "\n255\n";
  for (Eigen::Index y = 0; y < image.rows(); ++y)
    for (Eigen::Index x = 0; x < image.cols(); ++x) {
      const double v = std::clamp(image(y, x), 0.0, 1.0);
      os.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  if (!os) throw std::runtime_error("failed writing PGM: " + path);
}

MatrixXd read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open PGM: " + path);

  auto next_token = [&is, &path]() -> std::string {
    std::string tok;
    int ch;
    while ((ch = is.get()) != EOF) {
      if (ch == '#') {  // comment to end of line
        while ((ch = is.get()) != EOF && ch != '\n') {
        }
        continue;
      }
      if (std::isspace(ch)) {
        if (!tok.empty()) return tok;
        continue;
      }
      tok += static_cast<char>(ch);
    }
    if (tok.empty()) throw std::runtime_error("truncated PGM header: " + path);
    return tok;
  };

  if (next_token() != "P5") throw std::runtime_error("not a binary PGM: " + path);
  const int w = std::stoi(next_token());
  const int h = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw std::runtime_error("unsupported PGM header in " + path);

  MatrixXd image(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int ch = is.get();
      if (ch == EOF) throw std::runtime_error("truncated PGM data: " + path);
      image(y, x) = static_cast<double>(ch) / maxval;
    }
  return image;
}

void write_float_raw(const std::string& path, const std::vector<MatrixXd>& images) {
  require(!images.empty(), "float-raw writer needs at least one image");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write float-raw file: " + path);
  bio::write_u32le(os, static_cast<std::uint32_t>(images[0].rows()));
  bio::write_u32le(os, static_cast<std::uint32_t>(images[0].cols()));
  bio::write_u32le(os, static_cast<std::uint32_t>(images.size()));
  for (const auto& img : images) bio::write_matrix_f32(os, img);
  if (!os) throw std::runtime_error("failed writing float-raw file: " + path);
}

std::vector<MatrixXd> read_float_raw(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open float-raw file: " + path);
  std::uint32_t h = 0, w = 0, count = 0;
  if (!bio::read_u32le(is, h) || !bio::read_u32le(is, w) || !bio::read_u32le(is, count))
    throw std::runtime_error("truncated float-raw header: " + path);
  std::vector<MatrixXd> images;
  images.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i)
    images.push_back(bio::read_matrix_f32(is, h, w, "float-raw image in " + path));
  return images;
}

MatrixXd to_image(const VectorXd& flat, int height, int width) {
  require(flat.size() == static_cast<Eigen::Index>(height) * width,
          "flattened image has wrong length");
  MatrixXd out(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) out(y, x) = flat[y * width + x];
  return out;
}

VectorXd to_vector(const MatrixXd& image) {
  VectorXd out(image.size());
  for (Eigen::Index y = 0; y < image.rows(); ++y)
    for (Eigen::Index x = 0; x < image.cols(); ++x) out[y * image.cols() + x] = image(y, x);
  return out;
}

double bilinear_sample(const MatrixXd& image, double row, double col) {
  const int r0 = static_cast<int>(std::floor(row));
  const int c0 = static_cast<int>(std::floor(col));
  const double fr = row - r0;
  const double fc = col - c0;
  auto at = [&image](int r, int c) -> double {
    if (r < 0 || r >= image.rows() || c < 0 || c >= image.cols()) return 0.0;
    return image(r, c);
  };
  return (1.0 - fr) * (1.0 - fc) * at(r0, c0) + (1.0 - fr) * fc * at(r0, c0 + 1) +
         fr * (1.0 - fc) * at(r0 + 1, c0) + fr * fc * at(r0 + 1, c0 + 1);
}

NorbTensor parse_norb_matrix(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open NORB matrix file: " + path);
  const std::uintmax_t file_size = fs::file_size(path);

  std::uint32_t magic = 0;
  if (!bio::read_u32le(is, magic))
    throw std::runtime_error("truncated NORB matrix file (no magic): " + path);

  NorbTensor t;
  std::size_t element_size = 0;
  switch (magic) {
    case 0x1E3D4C55u: t.element_type = NorbElementType::Uint8; element_size = 1; break;
    case 0x1E3D4C56u: t.element_type = NorbElementType::Int16; element_size = 2; break;
    case 0x1E3D4C54u: t.element_type = NorbElementType::Int32; element_size = 4; break;
    case 0x1E3D4C51u: t.element_type = NorbElementType::Float32; element_size = 4; break;
    case 0x1E3D4C53u: t.element_type = NorbElementType::Float64; element_size = 8; break;
    default: {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "0x%08X", magic);
      throw std::runtime_error(std::string("unknown NORB matrix magic ") + buf + " in " + path);
    }
  }

  std::uint32_t ndim = 0;
  if (!bio::read_u32le(is, ndim))
    throw std::runtime_error("truncated NORB matrix file (no ndim): " + path);
  if (ndim == 0 || ndim > 8)
    throw std::runtime_error("NORB matrix dimension overflow: ndim = " + std::to_string(ndim) +
                             " in " + path);

  // The container always stores at least 3 dimension sizes; extras are 1.
  const std::uint32_t stored_dims = std::max<std::uint32_t>(ndim, 3);
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < stored_dims; ++i) {
    std::uint32_t d = 0;
    if (!bio::read_u32le(is, d))
      throw std::runtime_error("truncated NORB matrix file (dimension sizes): " + path);
    if (i >= ndim) continue;
    if (d == 0) throw std::runtime_error("NORB matrix has a zero dimension in " + path);
    count *= d;
    if (count > (1ull << 34))
      throw std::runtime_error("NORB matrix dimension overflow: element count too large in " +
                               path);
    t.dims.push_back(static_cast<int>(d));
  }

  const std::uint64_t header_bytes = 4 + 4 + 4ull * stored_dims;
  const std::uint64_t expected = header_bytes + count * element_size;
  if (file_size < expected)
    throw std::runtime_error("truncated NORB matrix file: " + path + " has " +
                             std::to_string(file_size) + " bytes, expected " +
                             std::to_string(expected));
  if (file_size > expected)
    throw std::runtime_error("NORB matrix file length mismatch: " + path + " has trailing bytes");

  t.data.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    switch (t.element_type) {
      case NorbElementType::Uint8: {
        const int ch = is.get();
        if (ch == EOF) throw std::runtime_error("truncated NORB matrix data: " + path);
        t.data[i] = static_cast<double>(ch);
        break;
      }
      case NorbElementType::Int16: {
        unsigned char b[2];
        if (!is.read(reinterpret_cast<char*>(b), 2))
          throw std::runtime_error("truncated NORB matrix data: " + path);
        t.data[i] = static_cast<double>(static_cast<std::int16_t>(b[0] | (b[1] << 8)));
        break;
      }
      case NorbElementType::Int32: {
        std::int32_t v = 0;
        if (!bio::read_i32le(is, v))
          throw std::runtime_error("truncated NORB matrix data: " + path);
        t.data[i] = static_cast<double>(v);
        break;
      }
      case NorbElementType::Float32: {
        float v = 0.0f;
        if (!bio::read_f32le(is, v))
          throw std::runtime_error("truncated NORB matrix data: " + path);
        t.data[i] = static_cast<double>(v);
        break;
      }
      case NorbElementType::Float64: {
        unsigned char b[8];
        if (!is.read(reinterpret_cast<char*>(b), 8))
          throw std::runtime_error("truncated NORB matrix data: " + path);
        std::uint64_t bits = 0;
        for (int k = 7; k >= 0; --k) bits = (bits << 8) | b[k];
        double v;
        std::memcpy(&v, &bits, 8);
        t.data[i] = v;
        break;
      }
    }
  }
  return t;
}

}  // namespace tdist
