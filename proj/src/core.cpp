#include "ulm/core.hpp"

namespace ulm {

void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

void Grid::validate() const {
  require(rows > 0 && cols > 0, "Grid: empty shape");
  require(dx_mm > 0.0 && dz_mm > 0.0, "Grid: spacing must be positive");
}

void ImageSequence::validate() const {
  require(frame_rate > 0.0, "ImageSequence: frame rate must be positive");
  for (const auto& f : frames)
    require(f.rows() == grid.rows && f.cols() == grid.cols, "ImageSequence: frame shape differs from grid");
  require(frame_index.empty() || frame_index.size() == frames.size(), "ImageSequence: frame_index size mismatch");
}

std::string to_string(SequenceKind k) { return k == SequenceKind::BMode ? "bmode" : "ceus"; }

SequenceKind sequence_kind_from(const std::string& s) {
  if (s == "bmode") return SequenceKind::BMode;
  if (s == "ceus") return SequenceKind::Ceus;
  fail(ErrorCode::InvalidArgument, "unknown sequence kind: " + s);
}

}  // namespace ulm
