#include "dmplug/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "file formats are defined little-endian");

namespace dmplug {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr char kMagic[] = "DMPLUG1";
constexpr size_t kMagicLen = 7;

void write_all(std::ofstream& f, const void* p, size_t n) {
    f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

std::vector<char> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open '" + path + "'");
    f.seekg(0, std::ios::end);
    auto n = f.tellg();
    f.seekg(0);
    std::vector<char> buf(static_cast<size_t>(n));
    f.read(buf.data(), n);
    if (!f) throw FormatError("cannot read '" + path + "'");
    return buf;
}

} // namespace

void save_checkpoint(const std::string& path, const NeuralScore& net,
                     const NoiseSchedule& schedule) {
    ordered_json meta;
    meta["data_dim"] = net.data_dim;
    meta["T"] = net.T;
    meta["embed_dim"] = net.embed_dim;
    meta["widths"] = net.widths;

    std::vector<const std::vector<double>*> payloads;
    ordered_json manifest = ordered_json::array();
    uint64_t offset = 0;
    auto add = [&](const std::string& name, const Shape& shape,
                   const std::vector<double>& data) {
        ordered_json e;
        e["name"] = name;
        e["shape"] = shape;
        e["offset"] = offset;
        e["bytes"] = data.size() * 8;
        manifest.push_back(std::move(e));
        payloads.push_back(&data);
        offset += data.size() * 8;
    };
    add("schedule.betas", {schedule.T}, schedule.betas);
    for (size_t i = 0; i < net.params.size(); ++i)
        add(net.param_names[i], net.params[i].shape(), net.params[i].data());
    meta["tensors"] = std::move(manifest);

    std::string meta_str = meta.dump();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open '" + path + "' for writing");
    write_all(f, kMagic, kMagicLen);
    uint64_t len = meta_str.size();
    write_all(f, &len, 8);
    write_all(f, meta_str.data(), meta_str.size());
    for (const auto* p : payloads) write_all(f, p->data(), p->size() * 8);
    if (!f) throw FormatError("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::vector<char> buf = read_file(path);
    if (buf.size() < kMagicLen + 8 ||
        std::memcmp(buf.data(), kMagic, kMagicLen) != 0)
        throw FormatError("'" + path + "': bad magic at offset 0");
    uint64_t meta_len;
    std::memcpy(&meta_len, buf.data() + kMagicLen, 8);
    size_t meta_start = kMagicLen + 8;
    if (buf.size() < meta_start + meta_len)
        throw FormatError("'" + path + "': truncated metadata at offset " +
                          std::to_string(meta_start));
    ordered_json meta;
    try {
        meta = ordered_json::parse(buf.begin() + static_cast<long>(meta_start),
                                   buf.begin() +
                                       static_cast<long>(meta_start + meta_len));
    } catch (const std::exception& e) {
        throw FormatError("'" + path + "': metadata parse error: " + e.what());
    }

    size_t payload_start = meta_start + static_cast<size_t>(meta_len);
    size_t payload_size = buf.size() - payload_start;

    struct Entry {
        std::string name;
        Shape shape;
        uint64_t offset, bytes;
    };
    std::vector<Entry> entries;
    uint64_t expect = 0;
    try {
        for (const auto& e : meta.at("tensors")) {
            Entry en{e.at("name").get<std::string>(), e.at("shape").get<Shape>(),
                     e.at("offset").get<uint64_t>(),
                     e.at("bytes").get<uint64_t>()};
            if (en.offset != expect)
                throw FormatError("'" + path + "': manifest gap at offset " +
                                  std::to_string(expect));
            if (en.bytes != static_cast<uint64_t>(numel(en.shape)) * 8)
                throw FormatError("'" + path +
                                  "': manifest/shape disagreement at offset " +
                                  std::to_string(en.offset));
            expect = en.offset + en.bytes;
            entries.push_back(std::move(en));
        }
    } catch (const ordered_json::exception& e) {
        throw FormatError("'" + path + "': bad manifest: " + e.what());
    }
    if (expect != payload_size)
        throw FormatError("'" + path + "': truncated payload at offset " +
                          std::to_string(payload_start + expect));

    auto read_tensor = [&](const Entry& en) {
        std::vector<double> v(en.bytes / 8);
        std::memcpy(v.data(), buf.data() + payload_start + en.offset, en.bytes);
        return v;
    };

    Checkpoint ck;
    int T, data_dim, embed_dim;
    std::vector<int> widths;
    try {
        data_dim = meta.at("data_dim").get<int>();
        T = meta.at("T").get<int>();
        embed_dim = meta.at("embed_dim").get<int>();
        widths = meta.at("widths").get<std::vector<int>>();
    } catch (const ordered_json::exception& e) {
        throw FormatError("'" + path + "': bad metadata: " + e.what());
    }
    if (entries.empty() || entries[0].name != "schedule.betas" ||
        entries[0].shape != Shape{T})
        throw FormatError("'" + path + "': missing schedule at offset 0");
    ck.schedule = make_schedule(read_tensor(entries[0]));

    ck.net = make_neural_score(data_dim, T, widths, embed_dim, 0);
    if (entries.size() != ck.net.params.size() + 1)
        throw FormatError("'" + path + "': expected " +
                          std::to_string(ck.net.params.size()) +
                          " parameter tensors, found " +
                          std::to_string(entries.size() - 1));
    for (size_t i = 0; i < ck.net.params.size(); ++i) {
        const Entry& en = entries[i + 1];
        if (en.name != ck.net.param_names[i] ||
            en.shape != ck.net.params[i].shape())
            throw FormatError("'" + path +
                              "': manifest/shape disagreement at offset " +
                              std::to_string(en.offset));
        ck.net.params[i].mutable_data() = read_tensor(en);
    }
    return ck;
}

void save_pgm(const std::string& path, const Tensor& img) {
    const Shape& s = img.shape();
    if (s.size() != 2)
        throw ContractError("save_pgm: expected a rank-2 image");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open '" + path + "' for writing");
    f << "P5\n" << s[1] << " " << s[0] << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(s[1]));
    for (int i = 0; i < s[0]; ++i) {
        for (int j = 0; j < s[1]; ++j) {
            double v = std::clamp(img.at(static_cast<int64_t>(i) * s[1] + j),
                                  0.0, 1.0);
            row[static_cast<size_t>(j)] =
                static_cast<unsigned char>(std::lround(v * 255.0));
        }
        write_all(f, row.data(), row.size());
    }
    if (!f) throw FormatError("write failed for '" + path + "'");
}

namespace {

// reads one whitespace-delimited header token, skipping '#' comment lines
std::string next_token(const std::vector<char>& buf, size_t& pos,
                       const std::string& path) {
    while (pos < buf.size()) {
        char c = buf[pos];
        if (c == '#') {
            while (pos < buf.size() && buf[pos] != '\n') ++pos;
        } else if (std::isspace(static_cast<unsigned char>(c))) {
            ++pos;
        } else {
            break;
        }
    }
    size_t start = pos;
    while (pos < buf.size() &&
           !std::isspace(static_cast<unsigned char>(buf[pos])))
        ++pos;
    if (start == pos)
        throw FormatError("'" + path + "': truncated header at offset " +
                          std::to_string(start));
    return {buf.begin() + static_cast<long>(start),
            buf.begin() + static_cast<long>(pos)};
}

} // namespace

Tensor load_pgm(const std::string& path) {
    std::vector<char> buf = read_file(path);
    size_t pos = 0;
    if (next_token(buf, pos, path) != "P5")
        throw FormatError("'" + path + "': bad magic at offset 0");
    int w = std::stoi(next_token(buf, pos, path));
    int h = std::stoi(next_token(buf, pos, path));
    int maxval = std::stoi(next_token(buf, pos, path));
    if (w <= 0 || h <= 0 || maxval != 255)
        throw FormatError("'" + path + "': unsupported header");
    ++pos; // single whitespace byte after maxval
    size_t need = static_cast<size_t>(w) * static_cast<size_t>(h);
    if (buf.size() < pos + need)
        throw FormatError("'" + path + "': truncated payload at offset " +
                          std::to_string(pos));
    std::vector<double> v(need);
    for (size_t i = 0; i < need; ++i)
        v[i] = static_cast<unsigned char>(buf[pos + i]) / 255.0;
    return Tensor::from_data({h, w}, std::move(v));
}

void save_pfm(const std::string& path, const Tensor& img) {
    const Shape& s = img.shape();
    if (s.size() != 2)
        throw ContractError("save_pfm: expected a rank-2 image");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open '" + path + "' for writing");
    f << "Pf\n" << s[1] << " " << s[0] << "\n-1.0\n"; // negative: little-endian
    std::vector<float> row(static_cast<size_t>(s[1]));
    for (int i = s[0] - 1; i >= 0; --i) { // bottom-up row order
        for (int j = 0; j < s[1]; ++j)
            row[static_cast<size_t>(j)] = static_cast<float>(
                img.at(static_cast<int64_t>(i) * s[1] + j));
        write_all(f, row.data(), row.size() * 4);
    }
    if (!f) throw FormatError("write failed for '" + path + "'");
}

Tensor load_pfm(const std::string& path) {
    std::vector<char> buf = read_file(path);
    size_t pos = 0;
    if (next_token(buf, pos, path) != "Pf")
        throw FormatError("'" + path + "': bad magic at offset 0");
    int w = std::stoi(next_token(buf, pos, path));
    int h = std::stoi(next_token(buf, pos, path));
    double scale = std::stod(next_token(buf, pos, path));
    if (w <= 0 || h <= 0 || scale >= 0.0)
        throw FormatError("'" + path + "': unsupported header");
    ++pos;
    size_t need = static_cast<size_t>(w) * static_cast<size_t>(h) * 4;
    if (buf.size() < pos + need)
        throw FormatError("'" + path + "': truncated payload at offset " +
                          std::to_string(pos));
    std::vector<double> v(static_cast<size_t>(w) * h);
    for (int i = h - 1; i >= 0; --i) {
        for (int j = 0; j < w; ++j) {
            float x;
            std::memcpy(&x, buf.data() + pos, 4);
            pos += 4;
            v[static_cast<size_t>(i) * w + j] = static_cast<double>(x);
        }
    }
    return Tensor::from_data({h, w}, std::move(v));
}

} // namespace dmplug
