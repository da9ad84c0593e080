#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "spectrumfm/mat.hpp"
#include "spectrumfm/params.hpp"

namespace spectrumfm::checkpoint {

// Named-tensor archive: magic + version + JSON index + raw float64 LE
// payload. Tensor names are the stable dotted parameter paths, so
// load(save(model)) reproduces values bit-exactly.
struct ArchiveEntry {
    std::string name;
    Mat mat;
};

struct Archive {
    std::string meta_json;  // structured metadata (configs etc.)
    std::vector<ArchiveEntry> tensors;

    const Mat* find(std::string_view name) const;
};

void save_archive(const std::string& path, const std::string& meta_json,
                  const std::vector<ArchiveEntry>& tensors);
Archive load_archive(const std::string& path);

// Saves every parameter of a store under its dotted path.
void save_store(const std::string& path, const ParamStore& store, const std::string& meta_json);

// Fills every parameter of the store from same-named tensors. Archive
// entries without a matching parameter are ignored; missing or
// shape-mismatched parameters raise a DataError naming each offender.
void load_store(const Archive& archive, ParamStore& store);

// FNV-1a content hash, hex-encoded; used for config/artifact fingerprints.
std::string fnv1a_hex(std::string_view bytes);
std::string file_fingerprint(const std::string& path);

}  // namespace spectrumfm::checkpoint
