#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dvae/models.hpp"
#include "dvae/tensor.hpp"

namespace dvae {

// NPY v1.0, C order, dtypes |b1 |u1 <f4 <f8.
struct NpyArray {
  Shape shape;
  std::string descr;
  std::vector<double> data;
};

NpyArray read_npy(const std::filesystem::path& path);
/// Leading axis becomes rows, the trailing axes are flattened into columns.
Tensor read_npy_matrix(const std::filesystem::path& path);
void write_npy(const std::filesystem::path& path, const Tensor& values, const std::string& descr = "<f8");

/// IDX (big-endian, u8 payload) scaled to [0, 1]; axis 0 indexes rows. A non-zero `resize`
/// resamples square images to resize x resize by nearest neighbour.
Tensor read_idx(const std::filesystem::path& path, std::size_t resize = 0);

/// 17 significant digits, round-trips every double.
std::string format_double(double v);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);
CsvTable read_csv(const std::filesystem::path& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  VaeModel model;
  std::uint64_t seed = 0;
  std::string metadata;  // the JSON block as stored
};

void save_checkpoint(const std::filesystem::path& path, const VaeModel& model, std::uint64_t seed);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dvae
