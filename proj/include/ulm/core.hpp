#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ulm {

using cdouble = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;

// Error categories map one-to-one onto CLI exit codes (see cli/pipeline).
enum class ErrorCode {
  InvalidArgument,
  ConfigInvalid,
  MissingInput,
  HashMismatch,
  Numerical,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorCode::InvalidArgument, what);
}

struct Vec2 {
  double x = 0.0;
  double z = 0.0;

  Vec2& operator+=(Vec2 o) { x += o.x; z += o.z; return *this; }
  Vec2& operator-=(Vec2 o) { x -= o.x; z -= o.z; return *this; }
  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.z + b.z}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.z - b.z}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.z}; }
  friend Vec2 operator*(Vec2 a, double s) { return {s * a.x, s * a.z}; }
  friend bool operator==(Vec2 a, Vec2 b) = default;
  double norm() const { return std::hypot(x, z); }
  double dot(Vec2 o) const { return x * o.x + z * o.z; }
};

/// Row-major 2D array. Rows run along depth (z), columns along lateral (x).
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int rows, int cols, T fill = T{}) : rows_(rows), cols_(cols), data_(std::size_t(rows) * cols, fill) {
    require(rows >= 0 && cols >= 0, "Image: negative shape");
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Image& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool contains(int r, int c) const { return r >= 0 && c >= 0 && r < rows_ && c < cols_; }

  T& operator()(int r, int c) { return data_[std::size_t(r) * cols_ + c]; }
  const T& operator()(int r, int c) const { return data_[std::size_t(r) * cols_ + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

using ImageD = Image<double>;
using ImageC = Image<cdouble>;

/// Cartesian raster geometry: pixel (r, c) sits at (x0 + c*dx, z0 + r*dz) in mm.
struct Grid {
  int rows = 0;
  int cols = 0;
  double x0_mm = 0.0;
  double z0_mm = 0.0;
  double dx_mm = 0.1;
  double dz_mm = 0.1;

  double x(double c) const { return x0_mm + c * dx_mm; }
  double z(double r) const { return z0_mm + r * dz_mm; }
  Vec2 position(double r, double c) const { return {x(c), z(r)}; }
  double col_of(double x_mm) const { return (x_mm - x0_mm) / dx_mm; }
  double row_of(double z_mm) const { return (z_mm - z0_mm) / dz_mm; }
  double x_max() const { return x(cols - 1); }
  double z_max() const { return z(rows - 1); }
  bool inside(Vec2 p) const {
    const double r = row_of(p.z), c = col_of(p.x);
    return r >= 0.0 && c >= 0.0 && r <= rows - 1 && c <= cols - 1;
  }
  void validate() const;
  friend bool operator==(const Grid&, const Grid&) = default;
};

enum class SequenceKind { BMode, Ceus };

/// Time-ordered frames sharing one geometry.
struct ImageSequence {
  std::vector<ImageD> frames;
  Grid grid;
  double frame_rate = 305.0;
  SequenceKind kind = SequenceKind::Ceus;
  std::vector<int> frame_index;  // original acquisition index per frame

  std::size_t size() const { return frames.size(); }
  void validate() const;
};

std::string to_string(SequenceKind k);
SequenceKind sequence_kind_from(const std::string& s);

// Speed of sound used throughout unless a probe overrides it.
inline constexpr double kSoundSpeedMps = 1540.0;

inline double wavelength_um(double center_frequency_mhz, double sound_speed_mps = kSoundSpeedMps) {
  return sound_speed_mps / center_frequency_mhz;  // (m/s)/(MHz) = um
}

}  // namespace ulm
