#include "ulm/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "ulm/assignment.hpp"

namespace ulm {

FuzzyOptions TrackerOptions::fuzzy() const {
  FuzzyOptions f;
  f.v_max_mms = v_max_mms;
  f.frame_rate = frame_rate;
  f.windows = fuzzy_windows;
  f.window_lo = window_lo;
  f.window_hi = window_hi;
  return f;
}

void TrackerOptions::validate() const {
  if (!(frame_rate > 0.0) || !(v_max_mms > 0.0)) fail(ErrorCode::ConfigInvalid, "tracker: frame rate and v_max must be positive");
  if (min_track_len < 2) fail(ErrorCode::ConfigInvalid, "tracker: min_track_len must be at least 2");
  if (!(sigma_loc_mm > 0.0)) fail(ErrorCode::ConfigInvalid, "tracker: localization sigma must be positive");
  if (!(gate_factor > 0.0)) fail(ErrorCode::ConfigInvalid, "tracker: gate factor must be positive");
  fuzzy().validate();
}

std::vector<Track> TrackingResult::long_tracks(int min_len) const {
  std::vector<Track> out;
  for (const auto& t : tracks)
    if (static_cast<int>(t.size()) >= min_len) out.push_back(t);
  return out;
}

FrameTable group_by_frame(const std::vector<Localization>& locs) {
  std::map<int, std::vector<Detection>> by;
  for (std::size_t i = 0; i < locs.size(); ++i) {
    const auto& l = locs[i];
    by[l.frame].push_back({l.x_um * 1e-3, l.z_um * 1e-3, l.intensity, static_cast<int>(i)});
  }
  FrameTable t;
  for (auto& [k, v] : by) {
    t.numbers.push_back(k);
    t.detections.push_back(std::move(v));
  }
  return t;
}

namespace {

struct Live {
  int track = 0;
  Vec4 x = Vec4::Zero();
  double intensity = 0.0;
  bool fresh = true;
};

void fill_link_velocities(Track& t, double f) {
  auto& p = t.points;
  for (std::size_t i = 1; i < p.size(); ++i) {
    p[i].vx_mms = (p[i].x_mm - p[i - 1].x_mm) * f;
    p[i].vz_mms = (p[i].z_mm - p[i - 1].z_mm) * f;
  }
  if (p.size() > 1) {
    p[0].vx_mms = p[1].vx_mms;
    p[0].vz_mms = p[1].vz_mms;
  }
}

std::vector<int> disjoint_triples(const FrameTable& ft) {
  std::vector<int> starts;
  for (std::size_t t = 0; t + 2 < ft.numbers.size();) {
    const bool ok = ft.numbers[t + 1] == ft.numbers[t] + 1 && ft.numbers[t + 2] == ft.numbers[t] + 2 &&
                    !ft.detections[t].empty() && !ft.detections[t + 1].empty() && !ft.detections[t + 2].empty();
    if (ok) {
      starts.push_back(static_cast<int>(t));
      t += 3;
    } else {
      ++t;
    }
  }
  return starts;
}

}  // namespace

TrackingResult track_sequence(const std::vector<Localization>& locs, const TrackerOptions& opt, const MipView& mip) {
  opt.validate();
  TrackingResult res;
  const FrameTable ft = group_by_frame(locs);
  const FuzzyOptions fopt = opt.fuzzy();
  const Mat2 R = Mat2::Identity() * (opt.sigma_loc_mm * opt.sigma_loc_mm);
  const double f = opt.frame_rate;

  double q = opt.q;
  InnovationHistogram hist;
  const int groups = std::min<int>(opt.shat_groups, static_cast<int>(disjoint_triples(ft).size()));
  if (groups > 0 && (q < 0.0 || opt.init == InitMode::Fuzzy)) {
    res.shat = estimate_shat(ft.detections, ft.numbers, mip, fopt, groups);
    hist = res.shat->histogram;
  }
  if (q < 0.0) {
    if (res.shat) {
      res.q_solution = solve_q(R, res.shat->S_hat.determinant(), f);
      q = res.q_solution->q;
    } else {
      q = 0.0;
    }
  }
  res.model = build_model(f, R, q);
  const KalmanModel& km = res.model;
  const double gate = opt.gate_mm();
  const double limit = opt.pairing == PairingMode::Kalman ? dummy_limit(km) : gate;

  std::vector<Live> live;
  auto open = [&](const Detection& d, int frame) {
    Track t;
    t.id = static_cast<int>(res.tracks.size());
    t.points.push_back({frame, d.x_mm, d.z_mm, 0.0, 0.0, d.intensity, d.source});
    res.tracks.push_back(std::move(t));
    Live l;
    l.track = res.tracks.back().id;
    l.x << d.x_mm, 0.0, d.z_mm, 0.0;
    l.intensity = d.intensity;
    return l;
  };

  const int K = static_cast<int>(ft.numbers.size());
  for (int k = 0; k < K; ++k) {
    const auto& cur = ft.detections[k];
    if (k == 0 || ft.numbers[k] != ft.numbers[k - 1] + 1) {
      live.clear();
      for (const auto& d : cur) live.push_back(open(d, ft.numbers[k]));
    }
    const bool has_next = k + 1 < K && ft.numbers[k + 1] == ft.numbers[k] + 1;
    if (!has_next) {
      live.clear();
      continue;
    }
    const auto& next = ft.detections[k + 1];

    if (opt.init == InitMode::Fuzzy && opt.pairing == PairingMode::Kalman) {
      const bool has_third = k + 2 < K && ft.numbers[k + 2] == ft.numbers[k] + 2;
      std::vector<int> fresh;
      std::vector<Detection> first;
      for (int i = 0; i < static_cast<int>(live.size()); ++i)
        if (live[i].fresh) {
          fresh.push_back(i);
          first.push_back({live[i].x(0), live[i].x(2), live[i].intensity, -1});
        }
      if (has_third && !first.empty()) {
        const auto init = fuzzy_init(first, next, ft.detections[k + 2], mip, fopt, hist);
        for (std::size_t j = 0; j < fresh.size(); ++j)
          if (init[j].initialised) {
            live[fresh[j]].x(1) = init[j].velocity(0);
            live[fresh[j]].x(3) = init[j].velocity(1);
          }
      }
    }
    for (auto& l : live) l.fresh = false;

    const int M = static_cast<int>(live.size()), N = static_cast<int>(next.size());
    Eigen::MatrixXd cost(M, N);
    std::vector<Vec4> pred(M);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < M; ++i) {
      pred[i] = opt.pairing == PairingMode::Kalman ? km.predict(live[i].x) : live[i].x;
      for (int j = 0; j < N; ++j) {
        const double dx = next[j].x_mm - pred[i](0), dz = next[j].z_mm - pred[i](2);
        if (opt.pairing == PairingMode::Kalman) {
          cost(i, j) = pairing_cost(km, dx, dz, live[i].intensity, next[j].intensity, gate);
        } else {
          const double dist = std::hypot(dx, dz);
          cost(i, j) = dist <= gate ? dist : std::numeric_limits<double>::infinity();
        }
      }
    }
    const auto match = assign(cost, limit);

    std::vector<char> taken(N, 0);
    std::vector<Live> kept;
    for (int i = 0; i < M; ++i) {
      const int j = match[i];
      if (j < 0) continue;
      taken[j] = 1;
      Live l = live[i];
      if (opt.pairing == PairingMode::Kalman)
        l.x = km.update(pred[i], next[j].x_mm, next[j].z_mm);
      else
        l.x << next[j].x_mm, 0.0, next[j].z_mm, 0.0;
      l.intensity = next[j].intensity;
      res.tracks[l.track].points.push_back(
          {ft.numbers[k + 1], next[j].x_mm, next[j].z_mm, 0.0, 0.0, next[j].intensity, next[j].source});
      kept.push_back(l);
    }
    for (int j = 0; j < N; ++j)
      if (!taken[j]) kept.push_back(open(next[j], ft.numbers[k + 1]));
    live = std::move(kept);
  }
  for (auto& t : res.tracks) fill_link_velocities(t, f);
  return res;
}

LinkScore score_links(const std::vector<Track>& tracks, const std::vector<Localization>& locs,
                      const std::vector<int>& truth_id) {
  require(truth_id.size() == locs.size(), "score_links: one truth id per localization");
  LinkScore s;
  std::map<std::pair<int, int>, int> seen;  // (id, frame)
  for (std::size_t i = 0; i < locs.size(); ++i) seen[{truth_id[i], locs[i].frame}]++;
  for (const auto& [key, n] : seen)
    if (seen.count({key.first, key.second + 1})) ++s.true_links;
  for (const auto& t : tracks)
    for (std::size_t i = 1; i < t.points.size(); ++i) {
      const int a = t.points[i - 1].source, b = t.points[i].source;
      if (a >= 0 && b >= 0 && truth_id[a] == truth_id[b])
        ++s.correct_links;
      else
        ++s.wrong_links;
    }
  return s;
}

void write_tracks_csv(std::ostream& os, const std::vector<Track>& tracks) {
  os << "track_id,frame,x_um,z_um,vx_mms,vz_mms,intensity\n" << std::setprecision(12);
  for (const auto& t : tracks)
    for (const auto& p : t.points)
      os << t.id << ',' << p.frame << ',' << p.x_mm * 1e3 << ',' << p.z_mm * 1e3 << ',' << p.vx_mms << ','
         << p.vz_mms << ',' << p.intensity << '\n';
}

std::vector<Track> read_tracks_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("track_id,frame,x_um,z_um,vx_mms,vz_mms,intensity", 0) != 0)
    fail(ErrorCode::MissingInput, "tracks CSV: missing or unexpected header");
  std::vector<Track> out;
  std::map<int, std::size_t> index;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    for (auto& ch : line)
      if (ch == ',') ch = ' ';
    std::istringstream ls(line);
    int id;
    TrackPoint p;
    double x_um, z_um;
    if (!(ls >> id >> p.frame >> x_um >> z_um >> p.vx_mms >> p.vz_mms >> p.intensity))
      fail(ErrorCode::ConfigInvalid, "tracks CSV: malformed line");
    p.x_mm = x_um * 1e-3;
    p.z_mm = z_um * 1e-3;
    auto it = index.find(id);
    if (it == index.end()) {
      it = index.emplace(id, out.size()).first;
      out.push_back(Track{id, {}});
    }
    out[it->second].points.push_back(p);
  }
  return out;
}

}  // namespace ulm
