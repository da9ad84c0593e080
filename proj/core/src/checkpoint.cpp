#include "spectrumfm/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace spectrumfm::checkpoint {

namespace {

constexpr char kMagic[4] = {'S', 'F', 'M', 'A'};
constexpr uint32_t kFormatVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

void write_u64(std::ostream& os, uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}

uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

const Mat* Archive::find(std::string_view name) const {
    for (const auto& e : tensors)
        if (e.name == name) return &e.mat;
    return nullptr;
}

void save_archive(const std::string& path, const std::string& meta_json,
                  const std::vector<ArchiveEntry>& tensors) {
    nlohmann::ordered_json header;
    header["meta"] = meta_json.empty() ? nlohmann::ordered_json::object()
                                       : nlohmann::ordered_json::parse(meta_json);
    auto& idx = header["tensors"] = nlohmann::ordered_json::array();
    uint64_t offset = 0;
    for (const auto& e : tensors) {
        idx.push_back({{"name", e.name},
                       {"rows", e.mat.rows},
                       {"cols", e.mat.cols},
                       {"offset", offset}});
        offset += e.mat.size() * sizeof(double);
    }
    const std::string hdr = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("save_archive: cannot open " + path);
    os.write(kMagic, 4);
    write_u32(os, kFormatVersion);
    write_u64(os, hdr.size());
    os.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
    for (const auto& e : tensors)
        os.write(reinterpret_cast<const char*>(e.mat.v.data()),
                 static_cast<std::streamsize>(e.mat.size() * sizeof(double)));
    os.close();
    if (!os) throw DataError("save_archive: write failed for " + path);
}

Archive load_archive(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("load_archive: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("load_archive: bad magic in " + path);
    const uint32_t version = read_u32(is);
    if (version != kFormatVersion)
        throw DataError("load_archive: unsupported archive version " + std::to_string(version));
    const uint64_t hdr_len = read_u64(is);
    std::string hdr(hdr_len, '\0');
    is.read(hdr.data(), static_cast<std::streamsize>(hdr_len));
    if (!is) throw DataError("load_archive: truncated header in " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hdr);
    } catch (const std::exception& e) {
        throw DataError(std::string("load_archive: malformed header: ") + e.what());
    }

    Archive out;
    out.meta_json = header.at("meta").dump();
    for (const auto& t : header.at("tensors")) {
        ArchiveEntry e;
        e.name = t.at("name").get<std::string>();
        e.mat = Mat(t.at("rows").get<int>(), t.at("cols").get<int>());
        is.read(reinterpret_cast<char*>(e.mat.v.data()),
                static_cast<std::streamsize>(e.mat.size() * sizeof(double)));
        if (!is) throw DataError("load_archive: truncated payload for tensor " + e.name);
        out.tensors.push_back(std::move(e));
    }
    return out;
}

void save_store(const std::string& path, const ParamStore& store, const std::string& meta_json) {
    std::vector<ArchiveEntry> tensors;
    tensors.reserve(store.count());
    for (const auto& p : store) tensors.push_back({p->name, p->value});
    save_archive(path, meta_json, tensors);
}

void load_store(const Archive& archive, ParamStore& store) {
    std::string problems;
    for (const auto& p : store) {
        const Mat* m = archive.find(p->name);
        if (!m) {
            problems += (problems.empty() ? "" : ", ") + p->name + " (missing)";
            continue;
        }
        if (m->rows != p->value.rows || m->cols != p->value.cols) {
            problems += (problems.empty() ? "" : ", ") + p->name + " (shape " +
                        std::to_string(m->rows) + "x" + std::to_string(m->cols) + " != " +
                        std::to_string(p->value.rows) + "x" + std::to_string(p->value.cols) + ")";
            continue;
        }
        p->value = *m;
    }
    if (!problems.empty()) throw DataError("load_store: incompatible tensors: " + problems);
}

std::string fnv1a_hex(std::string_view bytes) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

std::string file_fingerprint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("file_fingerprint: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return fnv1a_hex(bytes);
}

}  // namespace spectrumfm::checkpoint
