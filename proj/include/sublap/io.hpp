#pragma once

// Binary dense-matrix container shared by curvature factors and projectors:
//
//   bytes 0..7    magic "SUBLAPM1"
//   uint32        tag length L (little-endian)
//   L bytes       ASCII tag, e.g. "curvature-factor C=3" or "projector lowrank-kfac"
//   uint64        rows
//   uint64        cols
//   rows*cols     float64, row-major, little-endian
//
// Files are written to a temporary sibling and renamed into place.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "sublap/error.hpp"
#include "sublap/linalg.hpp"

namespace sublap {

static_assert(std::endian::native == std::endian::little,
              "binary matrix format assumes a little-endian host");

inline constexpr char kMatrixMagic[8] = {'S', 'U', 'B', 'L', 'A', 'P', 'M', '1'};

struct TaggedMatrix {
  std::string tag;
  Matrix matrix;
};

/// Writes via `<path>.tmp` and an atomic rename.
template <typename WriteFn>
void write_atomically(const std::string& path, WriteFn&& write,
                      std::ios::openmode mode = std::ios::out) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, mode | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp + " for writing");
    write(out);
    out.flush();
    if (!out) throw Error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline void save_matrix_bin(const std::string& path, const std::string& tag,
                            const Matrix& m) {
  write_atomically(
      path,
      [&](std::ofstream& out) {
        out.write(kMatrixMagic, sizeof kMatrixMagic);
        const auto len = static_cast<std::uint32_t>(tag.size());
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(tag.data(), static_cast<std::streamsize>(tag.size()));
        const auto rows = static_cast<std::uint64_t>(m.rows());
        const auto cols = static_cast<std::uint64_t>(m.cols());
        out.write(reinterpret_cast<const char*>(&rows), sizeof rows);
        out.write(reinterpret_cast<const char*>(&cols), sizeof cols);
        const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
            rm = m;
        out.write(reinterpret_cast<const char*>(rm.data()),
                  static_cast<std::streamsize>(rm.size() * sizeof(double)));
      },
      std::ios::out | std::ios::binary);
}

inline TaggedMatrix load_matrix_bin(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMatrixMagic, sizeof magic) != 0) {
    throw ParseError(path + ": not a sublap matrix file");
  }
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > 4096) throw ParseError(path + ": bad tag length");
  TaggedMatrix out;
  out.tag.resize(len);
  in.read(out.tag.data(), len);
  std::uint64_t rows = 0, cols = 0;
  in.read(reinterpret_cast<char*>(&rows), sizeof rows);
  in.read(reinterpret_cast<char*>(&cols), sizeof cols);
  if (!in) throw ParseError(path + ": truncated header");
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(
      static_cast<Index>(rows), static_cast<Index>(cols));
  in.read(reinterpret_cast<char*>(rm.data()),
          static_cast<std::streamsize>(rm.size() * sizeof(double)));
  if (!in) throw ParseError(path + ": truncated payload");
  out.matrix = rm;
  return out;
}

}  // namespace sublap
