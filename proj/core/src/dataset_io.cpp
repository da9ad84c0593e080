#include <cstdint>
#include <cstring>
#include <fstream>

#include "spectrumfm/signals.hpp"

#include <json.hpp>

namespace spectrumfm::signals {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string manifest_path(const std::string& base) { return base + ".manifest.json"; }
std::string payload_path(const std::string& base) { return base + ".f32"; }

}  // namespace

void write_dataset(const std::string& base_path, const DatasetManifest& manifest,
                   std::span<const LabeledFrame> frames) {
    if (manifest.num_frames != static_cast<long>(frames.size()))
        throw DataError("write_dataset: manifest frame count disagrees with payload");
    if (manifest.labels.size() != frames.size() || manifest.frame_snrs.size() != frames.size())
        throw DataError("write_dataset: manifest label/snr arrays disagree with payload");
    if (manifest.channels != 2) throw DataError("write_dataset: channels must be 2");
    for (const auto& f : frames)
        if (f.frame.n() != manifest.frame_len)
            throw DataError("write_dataset: frame length disagrees with manifest");

    ordered_json j;
    j["version"] = manifest.version;
    j["task"] = task_name(manifest.task);
    j["num_frames"] = manifest.num_frames;
    j["frame_len"] = manifest.frame_len;
    j["channels"] = manifest.channels;
    j["class_names"] = manifest.class_names;
    j["snr_levels"] = manifest.snr_levels;
    j["labels"] = manifest.labels;
    j["frame_snrs"] = manifest.frame_snrs;

    std::ofstream mf(manifest_path(base_path), std::ios::binary);
    if (!mf) throw DataError("write_dataset: cannot open " + manifest_path(base_path));
    mf << j.dump(2) << "\n";
    mf.close();
    if (!mf) throw DataError("write_dataset: failed writing manifest");

    std::ofstream pf(payload_path(base_path), std::ios::binary);
    if (!pf) throw DataError("write_dataset: cannot open " + payload_path(base_path));
    for (const auto& f : frames) {
        pf.write(reinterpret_cast<const char*>(f.frame.i.data()),
                 static_cast<std::streamsize>(f.frame.i.size() * sizeof(float)));
        pf.write(reinterpret_cast<const char*>(f.frame.q.data()),
                 static_cast<std::streamsize>(f.frame.q.size() * sizeof(float)));
    }
    pf.close();
    if (!pf) throw DataError("write_dataset: failed writing payload");
}

std::pair<DatasetManifest, std::vector<LabeledFrame>> read_dataset(const std::string& base_path) {
    std::ifstream mf(manifest_path(base_path), std::ios::binary);
    if (!mf) throw DataError("read_dataset: cannot open " + manifest_path(base_path));
    ordered_json j;
    try {
        mf >> j;
    } catch (const std::exception& e) {
        throw DataError(std::string("read_dataset: malformed manifest: ") + e.what());
    }

    DatasetManifest manifest;
    manifest.version = j.at("version").get<int>();
    if (manifest.version != 1)
        throw DataError("read_dataset: unsupported format version " +
                        std::to_string(manifest.version));
    manifest.task = task_from_name(j.at("task").get<std::string>());
    manifest.num_frames = j.at("num_frames").get<long>();
    manifest.frame_len = j.at("frame_len").get<int>();
    manifest.channels = j.at("channels").get<int>();
    manifest.class_names = j.at("class_names").get<std::vector<std::string>>();
    manifest.snr_levels = j.at("snr_levels").get<std::vector<double>>();
    manifest.labels = j.at("labels").get<std::vector<int>>();
    manifest.frame_snrs = j.at("frame_snrs").get<std::vector<double>>();

    if (manifest.num_frames < 0 || manifest.frame_len <= 0 || manifest.channels != 2)
        throw DataError("read_dataset: inconsistent manifest geometry");
    if (manifest.labels.size() != static_cast<size_t>(manifest.num_frames) ||
        manifest.frame_snrs.size() != static_cast<size_t>(manifest.num_frames))
        throw DataError("read_dataset: manifest label/snr arrays disagree with num_frames");

    std::ifstream pf(payload_path(base_path), std::ios::binary | std::ios::ate);
    if (!pf) throw DataError("read_dataset: cannot open " + payload_path(base_path));
    const auto file_size = static_cast<uint64_t>(pf.tellg());
    const uint64_t expected = static_cast<uint64_t>(manifest.num_frames) *
                              static_cast<uint64_t>(manifest.channels) *
                              static_cast<uint64_t>(manifest.frame_len) * sizeof(float);
    if (file_size != expected)
        throw DataError("read_dataset: payload size " + std::to_string(file_size) +
                        " does not match manifest (expected " + std::to_string(expected) + ")");
    pf.seekg(0);

    std::vector<LabeledFrame> frames(static_cast<size_t>(manifest.num_frames));
    const size_t n = static_cast<size_t>(manifest.frame_len);
    for (size_t k = 0; k < frames.size(); ++k) {
        LabeledFrame& f = frames[k];
        f.frame.i.resize(n);
        f.frame.q.resize(n);
        pf.read(reinterpret_cast<char*>(f.frame.i.data()),
                static_cast<std::streamsize>(n * sizeof(float)));
        pf.read(reinterpret_cast<char*>(f.frame.q.data()),
                static_cast<std::streamsize>(n * sizeof(float)));
        f.label = manifest.labels[k];
        f.snr_db = manifest.frame_snrs[k];
        f.task = manifest.task;
    }
    if (!pf) throw DataError("read_dataset: truncated payload read");
    return {std::move(manifest), std::move(frames)};
}

}  // namespace spectrumfm::signals
