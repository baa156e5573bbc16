#ifndef TDIST_DATASET_HPP
#define TDIST_DATASET_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "tdist/common.hpp"
#include "tdist/features.hpp"

namespace tdist {

enum class Split { FeatureTrain, KnnTrain, Validation, Test };
enum class TransformKind { Rotation, Translation };
enum class PixelStorage { Pgm8, FloatRaw };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

// Seeded synthetic transformation benchmark: each identity is a composition
// of Gaussian blobs whose count and ring placement depend on the class, and
// every image renders that identity under one transform parameter (degrees of
// rotation or pixels of horizontal shift).
struct SyntheticSpec {
  int image_size = 16;
  int n_identities = 60;
  int n_classes = 4;
  TransformKind transform_kind = TransformKind::Rotation;
  std::vector<double> transform_params = {-60, -45, -30, -15, 0, 15, 30, 45, 60};
  std::uint64_t seed = 0;

  void validate() const;
};

struct ImageMeta {
  int identity = 0;
  int class_id = 0;
  double transform_param = 0.0;
  Split split = Split::KnnTrain;
};

struct LabeledDataset {
  int height = 0;
  int width = 0;
  PixelStorage storage = PixelStorage::Pgm8;
  std::vector<VectorXd> images;  // flattened row-major
  std::vector<ImageMeta> meta;

  int size() const { return static_cast<int>(images.size()); }
};

// Ordered (source index, target index) pairs sharing an identity.
struct PairSet {
  std::vector<std::pair<int, int>> pairs;
  double max_delta = 0.0;
  bool include_self = false;
};

LabeledDataset generate(const SyntheticSpec& spec);

// All ordered same-identity pairs with |param difference| <= max_delta
// (pass infinity for the unbounded regime). Self pairs iff include_self.
PairSet make_pairs(const LabeledDataset& ds, double max_delta, bool include_self);

// One random test image per identity; identities with at least two remaining
// images also donate one validation image; single-image identities go to the
// feature-training split.
LabeledDataset split_tfds1_style(LabeledDataset ds, std::uint64_t seed);

// Identities with at least four images donate one test and one validation
// image; everything else stays in the KNN training split.
LabeledDataset split_tfds2_style(LabeledDataset ds, std::uint64_t seed);

LabeledDataset filter_split(const LabeledDataset& ds, Split split);

// Directory layout: manifest.csv (filename,identity,class,transform_param,split)
// plus one image file per row; 8-bit PGM for raw data, float-raw for
// LCN-processed data.
void save_dataset(const LabeledDataset& ds, const std::string& dir);
LabeledDataset load_dataset(const std::string& dir);

// Bilinear downsample to downsample_to x downsample_to, then LCN, per image.
LabeledDataset preprocess(const LabeledDataset& ds, const LcnConfig& lcn_cfg, int downsample_to);

// ---------------------------------------------------------------------------
// Image file primitives
// ---------------------------------------------------------------------------

void write_pgm(const std::string& path, const MatrixXd& image);  // values clamped to [0,1]
MatrixXd read_pgm(const std::string& path);

// Float-raw: three u32 LE header fields (height, width, count) then
// height*width*count little-endian float32 values.
void write_float_raw(const std::string& path, const std::vector<MatrixXd>& images);
std::vector<MatrixXd> read_float_raw(const std::string& path);

MatrixXd to_image(const VectorXd& flat, int height, int width);
VectorXd to_vector(const MatrixXd& image);

// Zero-padded bilinear lookup at fractional coordinates.
double bilinear_sample(const MatrixXd& image, double row, double col);

// ---------------------------------------------------------------------------
// small-NORB binary matrix container
// ---------------------------------------------------------------------------

enum class NorbElementType { Uint8, Int16, Int32, Float32, Float64 };

struct NorbTensor {
  NorbElementType element_type = NorbElementType::Uint8;
  std::vector<int> dims;
  std::vector<double> data;  // values widened to double

  std::size_t element_count() const {
    std::size_t n = 1;
    for (int d : dims) n *= static_cast<std::size_t>(d);
    return n;
  }
};

// Parses the published binary matrix container: 4-byte LE magic selecting the
// element type, 4-byte LE ndim, max(ndim, 3) LE dimension sizes, packed data.
// Unknown magic, truncation and dimension overflow raise distinct errors.
NorbTensor parse_norb_matrix(const std::string& path);

}  // namespace tdist

#endif  // TDIST_DATASET_HPP
