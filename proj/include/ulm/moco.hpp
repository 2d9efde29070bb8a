#pragma once

// Tissue motion correction: cardiac gating on B-mode, intra-cycle affine +
// B-spline registration on SVD-filtered B-mode, inter-cycle rigid registration
// on cycle-averaged CEUS, and warping of the CEUS frames.

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ulm/core.hpp"
#include "ulm/registration.hpp"

namespace ulm {

struct CycleGating {
  std::vector<int> systole_starts;
  std::vector<std::pair<int, int>> diastole_windows;  // half-open frame ranges
  std::vector<double> correlation;                    // NCC of frames (i, i+1)
};

/// Adjacent-frame NCC; systole starts at minima below mean - 2 std; each
/// cycle keeps the last <= max_s of its longest above-mean run, dropped when
/// shorter than min_s.
CycleGating gate_cycles(const ImageSequence& bmode, double min_s = 0.2, double max_s = 0.4);

int svd_keep_count(int pixels, int frames, double keep_fraction = 0.05);

/// Reconstruction from the largest singular values of the Casorati matrix.
std::vector<ImageD> svd_tissue(const std::vector<ImageD>& frames, double keep_fraction = 0.05);

/// Mean SSIM with an 8x8 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, L = 1.
double ssim(const ImageD& a, const ImageD& b);

/// Frame most similar to the window mean (first index wins ties).
int select_reference(const std::vector<ImageD>& frames);

enum class MotionStage { Intra, Inter };
MotionStage motion_stage_from(const std::string& s);

/// Rejects any intra-cycle stage scheduled after an inter-cycle stage.
void validate_stage_order(std::span<const MotionStage> order);

/// Field of "intra after rigid": u(p) = R(p) + intra(R(p)) - p.
DisplacementField compose(const DisplacementField& intra, const RigidParams& rigid);

struct MocoOptions {
  double svd_keep_fraction = 0.05;
  double dynamic_range_db = 50.0;
  double gating_min_s = 0.2;
  double gating_max_s = 0.4;
  bool intra = true;
  bool inter = true;
  bool bspline = true;
  RegistrationOptions affine;
  BsplineOptions ffd;
  RegistrationOptions rigid;
  std::vector<MotionStage> order{MotionStage::Intra, MotionStage::Inter};
};

struct MocoResult {
  CycleGating gating;
  std::vector<int> frames;                // indices into the input sequences
  std::vector<int> window;                // gating window of each kept frame
  std::vector<DisplacementField> fields;  // composed field per kept frame (px)
  std::vector<RigidParams> cycle_rigid;   // per window, relative to the first
  ImageSequence corrected;                // warped CEUS frames (kept frames only)
};

MocoResult correct_motion(const ImageSequence& bmode, const ImageSequence& ceus, const MocoOptions& opt = {});

}  // namespace ulm
