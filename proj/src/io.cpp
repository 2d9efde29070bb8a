#include "ulm/io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace ulm {

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    fail(ErrorCode::Numerical, "sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) fail(ErrorCode::MissingInput, "missing input: " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string sha256_file(const fs::path& p) { return sha256_hex(read_file(p)); }

namespace {

std::string temp_suffix() {
  static thread_local std::mt19937_64 gen(std::random_device{}());
  std::ostringstream s;
  s << ".tmp-" << std::hex << gen();
  return s.str();
}

std::string dtype_name(Dtype d) { return d == Dtype::Float32 ? "float32" : "complex64"; }

Dtype dtype_from(const std::string& s) {
  if (s == "float32") return Dtype::Float32;
  if (s == "complex64") return Dtype::Complex64;
  fail(ErrorCode::HashMismatch, "unknown dtype '" + s + "'");
}

std::string to_le_bytes(const std::vector<float>& v) {
  std::string out(v.size() * 4, '\0');
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint32_t u;
    std::memcpy(&u, &v[i], 4);
    if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
    std::memcpy(out.data() + 4 * i, &u, 4);
  }
  return out;
}

std::vector<float> from_le_bytes(const std::string& b) {
  std::vector<float> v(b.size() / 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint32_t u;
    std::memcpy(&u, b.data() + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
    std::memcpy(&v[i], &u, 4);
  }
  return v;
}

std::string file_name(const ArrayData& a) { return a.name + (a.dtype == Dtype::Float32 ? ".f32" : ".c64"); }

std::string provenance_of(const json& attrs, const json& arrays) {
  return sha256_hex(attrs.dump() + "\n" + arrays.dump());
}

}  // namespace

void atomic_write(const fs::path& p, std::string_view bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + temp_suffix();
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) fail(ErrorCode::MissingInput, "cannot write " + tmp.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) fail(ErrorCode::MissingInput, "failed writing " + tmp.string());
  }
  fs::rename(tmp, p);
}

std::size_t ArrayData::element_count() const {
  std::size_t n = 1;
  for (int s : shape) n *= static_cast<std::size_t>(s);
  return n;
}

const ArrayData& Container::array(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  fail(ErrorCode::MissingInput, "container has no array '" + name + "'");
}

std::string Container::provenance() const {
  json arr = json::array();
  for (const auto& a : arrays)
    arr.push_back({{"name", a.name}, {"shape", a.shape}, {"dtype", dtype_name(a.dtype)},
                   {"sha256", sha256_hex(to_le_bytes(a.values))}});
  return provenance_of(meta, arr);
}

void write_container(const fs::path& dir, const Container& c) {
  const fs::path tmp = dir.string() + temp_suffix();
  fs::create_directories(tmp);
  json arr = json::array();
  for (const auto& a : c.arrays) {
    const std::size_t expect = a.element_count() * (a.dtype == Dtype::Complex64 ? 2 : 1);
    require(a.values.size() == expect, "container array '" + a.name + "' size does not match its shape");
    const std::string bytes = to_le_bytes(a.values);
    std::ofstream os(tmp / file_name(a), std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) fail(ErrorCode::MissingInput, "failed writing array " + a.name);
    arr.push_back({{"name", a.name}, {"shape", a.shape}, {"dtype", dtype_name(a.dtype)}, {"sha256", sha256_hex(bytes)}});
  }
  json meta = c.meta;
  meta["arrays"] = arr;
  meta["provenance"] = provenance_of(c.meta, arr);
  {
    std::ofstream os(tmp / "meta.json");
    os << meta.dump(2) << '\n';
    if (!os) fail(ErrorCode::MissingInput, "failed writing meta.json");
  }
  if (fs::exists(dir)) {
    const fs::path old = dir.string() + temp_suffix();
    fs::rename(dir, old);
    fs::rename(tmp, dir);
    fs::remove_all(old);
  } else {
    if (dir.has_parent_path()) fs::create_directories(dir.parent_path());
    fs::rename(tmp, dir);
  }
}

Container read_container(const fs::path& dir) {
  const fs::path mp = dir / "meta.json";
  if (!fs::exists(mp)) fail(ErrorCode::MissingInput, "missing container: " + dir.string());
  json meta;
  try {
    meta = json::parse(read_file(mp));
  } catch (const json::exception& e) {
    fail(ErrorCode::HashMismatch, "corrupt meta.json in " + dir.string() + ": " + e.what());
  }
  if (!meta.contains("arrays") || !meta.contains("provenance"))
    fail(ErrorCode::HashMismatch, "meta.json lacks arrays or provenance: " + dir.string());
  Container c;
  const json arr = meta["arrays"];
  const std::string prov = meta["provenance"].get<std::string>();
  meta.erase("arrays");
  meta.erase("provenance");
  c.meta = meta;
  if (provenance_of(c.meta, arr) != prov) fail(ErrorCode::HashMismatch, "provenance hash mismatch in " + dir.string());
  for (const auto& j : arr) {
    ArrayData a;
    a.name = j.at("name").get<std::string>();
    a.shape = j.at("shape").get<std::vector<int>>();
    a.dtype = dtype_from(j.at("dtype").get<std::string>());
    const fs::path fp = dir / file_name(a);
    if (!fs::exists(fp)) fail(ErrorCode::MissingInput, "missing array file: " + fp.string());
    const std::string bytes = read_file(fp);
    const std::size_t expect = a.element_count() * (a.dtype == Dtype::Complex64 ? 8 : 4);
    if (bytes.size() != expect) fail(ErrorCode::HashMismatch, "array size mismatch: " + fp.string());
    if (sha256_hex(bytes) != j.at("sha256").get<std::string>())
      fail(ErrorCode::HashMismatch, "array content hash mismatch: " + fp.string());
    a.values = from_le_bytes(bytes);
    c.arrays.push_back(std::move(a));
  }
  return c;
}

std::string container_provenance(const fs::path& dir) {
  const fs::path mp = dir / "meta.json";
  if (!fs::exists(mp)) fail(ErrorCode::MissingInput, "missing container: " + dir.string());
  try {
    return json::parse(read_file(mp)).at("provenance").get<std::string>();
  } catch (const json::exception&) {
    fail(ErrorCode::HashMismatch, "corrupt meta.json in " + dir.string());
  }
}

json grid_to_json(const Grid& g) {
  return {{"rows", g.rows}, {"cols", g.cols}, {"x0_mm", g.x0_mm}, {"z0_mm", g.z0_mm}, {"dx_mm", g.dx_mm}, {"dz_mm", g.dz_mm}};
}

Grid grid_from_json(const json& j) {
  Grid g;
  try {
    g.rows = j.at("rows");
    g.cols = j.at("cols");
    g.x0_mm = j.at("x0_mm");
    g.z0_mm = j.at("z0_mm");
    g.dx_mm = j.at("dx_mm");
    g.dz_mm = j.at("dz_mm");
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigInvalid, std::string("invalid grid: ") + e.what());
  }
  g.validate();
  return g;
}

namespace {

ArrayData stack(const std::string& name, const std::vector<const ImageD*>& frames, int rows, int cols) {
  ArrayData a;
  a.name = name;
  a.shape = {static_cast<int>(frames.size()), rows, cols};
  a.values.reserve(frames.size() * rows * cols);
  for (const ImageD* f : frames)
    for (double v : *f) a.values.push_back(static_cast<float>(v));
  return a;
}

std::vector<ImageD> unstack(const ArrayData& a) {
  if (a.shape.size() != 3 || a.dtype != Dtype::Float32) fail(ErrorCode::HashMismatch, "array '" + a.name + "' is not a float32 stack");
  const int n = a.shape[0], rows = a.shape[1], cols = a.shape[2];
  std::vector<ImageD> out(n, ImageD(rows, cols));
  std::size_t k = 0;
  for (auto& f : out)
    for (auto& v : f) v = a.values[k++];
  return out;
}

}  // namespace

Container sequence_to_container(const ImageSequence& seq) {
  Container c;
  c.meta["kind"] = to_string(seq.kind);
  c.meta["frame_rate"] = seq.frame_rate;
  c.meta["grid"] = grid_to_json(seq.grid);
  c.meta["frame_index"] = seq.frame_index;
  std::vector<const ImageD*> ptr;
  for (const auto& f : seq.frames) ptr.push_back(&f);
  c.arrays.push_back(stack("data", ptr, seq.grid.rows, seq.grid.cols));
  return c;
}

ImageSequence sequence_from_container(const Container& c) {
  ImageSequence s;
  try {
    s.kind = sequence_kind_from(c.meta.at("kind").get<std::string>());
    s.frame_rate = c.meta.at("frame_rate");
    s.frame_index = c.meta.at("frame_index").get<std::vector<int>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::HashMismatch, std::string("container is not an image sequence: ") + e.what());
  }
  s.grid = grid_from_json(c.meta.at("grid"));
  s.frames = unstack(c.array("data"));
  if (s.frame_index.size() != s.frames.size()) fail(ErrorCode::HashMismatch, "frame_index length differs from frames");
  return s;
}

Container motion_to_container(const std::vector<DisplacementField>& fields, const Grid& grid,
                              const std::vector<int>& frame_index) {
  Container c;
  c.meta["kind"] = "motion";
  c.meta["units"] = "mm";
  c.meta["grid"] = grid_to_json(grid);
  c.meta["frame_index"] = frame_index;
  std::vector<ImageD> ux, uz;
  for (const auto& f : fields) {
    ImageD x = f.dc, z = f.dr;
    for (auto& v : x) v *= grid.dx_mm;
    for (auto& v : z) v *= grid.dz_mm;
    ux.push_back(std::move(x));
    uz.push_back(std::move(z));
  }
  std::vector<const ImageD*> px, pz;
  for (std::size_t i = 0; i < ux.size(); ++i) {
    px.push_back(&ux[i]);
    pz.push_back(&uz[i]);
  }
  c.arrays.push_back(stack("ux", px, grid.rows, grid.cols));
  c.arrays.push_back(stack("uz", pz, grid.rows, grid.cols));
  return c;
}

Container psf_to_container(const Psf& psf) {
  psf.validate();
  Container c;
  c.meta["kind"] = "psf";
  c.meta["image_rows"] = psf.image_rows;
  c.meta["image_cols"] = psf.image_cols;
  c.meta["regions_z"] = psf.regions_z;
  c.meta["regions_x"] = psf.regions_x;
  std::vector<int> est(psf.estimated.begin(), psf.estimated.end());
  c.meta["estimated"] = est;
  for (int k = 0; k < psf.region_count(); ++k) {
    const ImageD& t = psf.templates[k];
    c.arrays.push_back(stack("region_" + std::to_string(k), {&t}, t.rows(), t.cols()));
  }
  return c;
}

Psf psf_from_container(const Container& c) {
  Psf p;
  try {
    p.image_rows = c.meta.at("image_rows");
    p.image_cols = c.meta.at("image_cols");
    p.regions_z = c.meta.at("regions_z");
    p.regions_x = c.meta.at("regions_x");
    for (int e : c.meta.at("estimated").get<std::vector<int>>()) p.estimated.push_back(e != 0);
  } catch (const json::exception& e) {
    fail(ErrorCode::HashMismatch, std::string("container is not a PSF set: ") + e.what());
  }
  for (int k = 0; k < p.region_count(); ++k) p.templates.push_back(unstack(c.array("region_" + std::to_string(k)))[0]);
  p.validate();
  return p;
}

}  // namespace ulm
