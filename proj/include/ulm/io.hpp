#pragma once

// On-disk dataset containers (meta.json + little-endian float32 arrays),
// content hashes and atomic file writes.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "ulm/core.hpp"
#include "ulm/psf.hpp"
#include "ulm/registration.hpp"

namespace ulm {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const fs::path& p);

/// Writes to a sibling temporary then renames over the target.
void atomic_write(const fs::path& p, std::string_view bytes);
std::string read_file(const fs::path& p);

enum class Dtype { Float32, Complex64 };

struct ArrayData {
  std::string name;
  std::vector<int> shape;  // [frame][depth][lateral] for image stacks
  Dtype dtype = Dtype::Float32;
  std::vector<float> values;  // complex stored as interleaved re/im

  std::size_t element_count() const;
};

struct Container {
  json meta = json::object();  // free-form attributes (kind, grid, frame_rate, ...)
  std::vector<ArrayData> arrays;

  const ArrayData& array(const std::string& name) const;
  std::string provenance() const;  // hash of attributes and array contents
};

/// Replaces dir atomically. meta.json gains "arrays" and "provenance".
void write_container(const fs::path& dir, const Container& c);

/// Missing files raise MissingInput; size or content mismatches raise HashMismatch.
Container read_container(const fs::path& dir);
std::string container_provenance(const fs::path& dir);

json grid_to_json(const Grid& g);
Grid grid_from_json(const json& j);

Container sequence_to_container(const ImageSequence& seq);
ImageSequence sequence_from_container(const Container& c);

/// ux, uz in mm, one frame per kept frame.
Container motion_to_container(const std::vector<DisplacementField>& fields, const Grid& grid,
                              const std::vector<int>& frame_index);

Container psf_to_container(const Psf& psf);
Psf psf_from_container(const Container& c);

}  // namespace ulm
