#include "lpe/storage.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include <json.hpp>

#include "lpe/errors.hpp"
#include "lpe/rng.hpp"

namespace lpe {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum class DType { f32, i8 };

std::size_t width(DType t) { return t == DType::f32 ? 4 : 1; }
std::string dtype_name(DType t) { return t == DType::f32 ? "f32" : "i8"; }

DType parse_dtype(const std::string& s) {
    if (s == "f32") return DType::f32;
    if (s == "i8") return DType::i8;
    throw FormatError("unsupported dtype '" + s + "'");
}

struct RawTensor {
    std::string name;
    DType dtype = DType::f32;
    Shape shape;
    std::vector<unsigned char> bytes;
};

RawTensor raw_f32(std::string name, const Shape& shape, std::span<const float> values) {
    RawTensor raw{std::move(name), DType::f32, shape, std::vector<unsigned char>(values.size() * 4)};
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(values[i]);
        for (int b = 0; b < 4; ++b) raw.bytes[i * 4 + b] = static_cast<unsigned char>(bits >> (8 * b));
    }
    return raw;
}

RawTensor raw_i8(std::string name, const Shape& shape, std::span<const std::int8_t> values) {
    RawTensor raw{std::move(name), DType::i8, shape, std::vector<unsigned char>(values.size())};
    for (std::size_t i = 0; i < values.size(); ++i) raw.bytes[i] = static_cast<unsigned char>(values[i]);
    return raw;
}

std::vector<float> as_f32(const RawTensor& raw) {
    if (raw.dtype != DType::f32) throw FormatError("tensor '" + raw.name + "' must be f32");
    std::vector<float> out(raw.bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(raw.bytes[i * 4 + b]) << (8 * b);
        out[i] = std::bit_cast<float>(bits);
    }
    return out;
}

std::vector<std::int8_t> as_i8(const RawTensor& raw) {
    if (raw.dtype != DType::i8) throw FormatError("tensor '" + raw.name + "' must be i8");
    std::vector<std::int8_t> out(raw.bytes.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<std::int8_t>(raw.bytes[i]);
    return out;
}

void write_atomic(const fs::path& path, const std::string& bytes) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("failed writing " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_container(const fs::path& path, json header, const std::vector<RawTensor>& tensors) {
    json entries = json::array();
    std::size_t offset = 0;
    for (const auto& t : tensors) {
        entries.push_back({{"name", t.name},
                           {"dtype", dtype_name(t.dtype)},
                           {"shape", t.shape},
                           {"offset", offset},
                           {"length", t.bytes.size()}});
        offset += t.bytes.size();
    }
    header["tensors"] = std::move(entries);
    const std::string text = header.dump();

    std::string bytes(kMagic, 4);
    const auto len = static_cast<std::uint32_t>(text.size());
    for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((len >> (8 * b)) & 0xFF));
    bytes += text;
    for (const auto& t : tensors) bytes.append(reinterpret_cast<const char*>(t.bytes.data()), t.bytes.size());
    write_atomic(path, bytes);
}

struct Container {
    json header;
    std::map<std::string, RawTensor> tensors;

    const RawTensor& get(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw FormatError("missing tensor '" + name + "'");
        return it->second;
    }
};

Container read_container(const fs::path& path) {
    const std::string file = read_file(path);
    if (file.size() < 8 || std::memcmp(file.data(), kMagic, 4) != 0) {
        throw FormatError(path.string() + ": bad magic (not an LPE1 file)");
    }
    std::uint32_t header_len = 0;
    for (int b = 0; b < 4; ++b) header_len |= static_cast<std::uint32_t>(static_cast<unsigned char>(file[4 + b])) << (8 * b);
    if (file.size() - 8 < header_len) {
        throw CorruptionError(path.string() + ": header needs " + std::to_string(header_len) + " bytes, file has " +
                              std::to_string(file.size() - 8));
    }
    Container c;
    try {
        c.header = json::parse(file.begin() + 8, file.begin() + 8 + header_len);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": unreadable header: " + e.what());
    }
    if (!c.header.is_object() || !c.header.contains("tensors") || !c.header["tensors"].is_array()) {
        throw FormatError(path.string() + ": header has no tensor table");
    }

    const std::size_t payload_begin = 8 + header_len;
    const std::size_t payload_size = file.size() - payload_begin;
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    std::size_t needed = 0;
    try {
        for (const auto& e : c.header["tensors"]) {
            RawTensor raw;
            raw.name = e.at("name").get<std::string>();
            raw.dtype = parse_dtype(e.at("dtype").get<std::string>());
            raw.shape = e.at("shape").get<Shape>();
            const auto offset = e.at("offset").get<std::size_t>();
            const auto length = e.at("length").get<std::size_t>();
            if (raw.shape.empty() || std::find(raw.shape.begin(), raw.shape.end(), 0u) != raw.shape.end()) {
                throw FormatError("tensor '" + raw.name + "' has invalid shape " + shape_string(raw.shape));
            }
            if (length != shape_numel(raw.shape) * width(raw.dtype)) {
                throw FormatError("tensor '" + raw.name + "' length " + std::to_string(length) + " does not match " +
                                  dtype_name(raw.dtype) + " shape " + shape_string(raw.shape));
            }
            if (c.tensors.count(raw.name)) throw FormatError("duplicate tensor '" + raw.name + "'");
            spans.emplace_back(offset, length);
            needed = std::max(needed, offset + length);
            if (offset + length <= payload_size) {
                const auto* begin = reinterpret_cast<const unsigned char*>(file.data() + payload_begin + offset);
                raw.bytes.assign(begin, begin + length);
            }
            c.tensors.emplace(raw.name, std::move(raw));
        }
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": malformed tensor table: " + e.what());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    std::sort(spans.begin(), spans.end());
    for (std::size_t i = 1; i < spans.size(); ++i) {
        if (spans[i - 1].first + spans[i - 1].second > spans[i].first) {
            throw FormatError(path.string() + ": tensor payloads overlap at byte " + std::to_string(spans[i].first));
        }
    }
    if (needed > payload_size) {
        throw CorruptionError(path.string() + ": truncated payload, tensors need " + std::to_string(needed) +
                              " bytes but only " + std::to_string(payload_size) + " are present");
    }
    return c;
}

json spec_to_json(const ModelSpec& spec) {
    return {{"layer_dims", spec.layer_dims},
            {"activation", std::string(to_string(spec.activation))},
            {"quantize_mask", spec.quantize_mask}};
}

ModelSpec spec_from_json(const json& j) {
    try {
        ModelSpec spec{j.at("layer_dims").get<std::vector<std::size_t>>(),
                       parse_activation(j.at("activation").get<std::string>()),
                       j.at("quantize_mask").get<std::vector<bool>>()};
        spec.validate();
        return spec;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed model spec: ") + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(std::string("invalid model spec: ") + e.what());
    }
}

void expect_kind(const Container& c, const std::string& kind, const fs::path& path) {
    if (c.header.value("kind", std::string()) != kind) {
        throw FormatError(path.string() + ": expected a " + kind + " file");
    }
}

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
    ckpt.validate();
    std::vector<RawTensor> tensors;
    for (std::size_t i = 0; i < ckpt.spec.num_layers(); ++i) {
        tensors.push_back(raw_f32(weight_name(i), ckpt.weight(i).shape(), ckpt.weight(i).data()));
        tensors.push_back(raw_f32(bias_name(i), ckpt.bias(i).shape(), ckpt.bias(i).data()));
    }
    write_container(path, {{"kind", "checkpoint"}, {"spec", spec_to_json(ckpt.spec)}}, tensors);
}

Checkpoint load_checkpoint(const fs::path& path) {
    const Container c = read_container(path);
    expect_kind(c, "checkpoint", path);
    Checkpoint ckpt{spec_from_json(c.header.at("spec")), {}};
    for (const auto& [name, raw] : c.tensors) ckpt.tensors.emplace(name, Tensor(raw.shape, as_f32(raw)));
    ckpt.validate();
    return ckpt;
}

void save_member(const fs::path& path, const ModelSpec& spec, const Member& member) {
    std::vector<RawTensor> tensors;
    json header{{"kind", "member"}, {"spec", spec_to_json(spec)}, {"index", member.index}, {"seed", member.seed}};
    for (const auto& [layer, variant] : member.layers) {
        const std::string name = weight_name(layer);
        if (const auto* q = std::get_if<QuantizedTensor>(&variant)) {
            tensors.push_back(raw_i8(name + ".codes", q->shape, q->codes));
            tensors.push_back(raw_f32(name + ".scales", {q->grids.channels()}, q->grids.scales));
            header["bits"] = q->grids.bits;
        } else if (const auto* dense = std::get_if<Tensor>(&variant)) {
            tensors.push_back(raw_f32(name, dense->shape(), dense->data()));
        } else {
            const Tensor& keep = std::get<DropMask>(variant).keep;
            std::vector<std::int8_t> bits(keep.numel());
            for (std::size_t k = 0; k < bits.size(); ++k) bits[k] = keep.data()[k] != 0.0f ? 1 : 0;
            tensors.push_back(raw_i8(name + ".keep", keep.shape(), bits));
        }
    }
    write_container(path, std::move(header), tensors);
}

Member load_member(const fs::path& path, const ModelSpec& spec) {
    const Container c = read_container(path);
    expect_kind(c, "member", path);
    if (!(spec_from_json(c.header.at("spec")) == spec)) {
        throw FormatError(path.string() + ": member was built for a different model layout");
    }
    Member m;
    try {
        m.index = c.header.at("index").get<std::size_t>();
        m.seed = c.header.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": malformed member header: " + e.what());
    }
    std::size_t used = 0;
    for (std::size_t i = 0; i < spec.num_layers(); ++i) {
        const std::string name = weight_name(i);
        if (c.tensors.count(name + ".codes")) {
            used += 2;
            const auto& codes = c.get(name + ".codes");
            QuantizedTensor q{codes.shape, as_i8(codes), {c.header.value("bits", 0), as_f32(c.get(name + ".scales"))}};
            if (q.grids.bits < kMinBits || q.grids.bits > kMaxBits) {
                throw FormatError(path.string() + ": invalid bit width " + std::to_string(q.grids.bits));
            }
            const int limit = q.grids.max_code();
            for (auto code : q.codes) {
                if (code < -limit || code > limit) {
                    throw FormatError(path.string() + ": code " + std::to_string(code) + " exceeds INT-" +
                                      std::to_string(q.grids.bits) + " range");
                }
            }
            m.layers.emplace(i, std::move(q));
        } else if (c.tensors.count(name)) {
            ++used;
            const auto& raw = c.get(name);
            m.layers.emplace(i, Tensor(raw.shape, as_f32(raw)));
        } else if (c.tensors.count(name + ".keep")) {
            ++used;
            const auto& raw = c.get(name + ".keep");
            const auto bits = as_i8(raw);
            std::vector<float> keep(bits.size());
            for (std::size_t k = 0; k < bits.size(); ++k) {
                if (bits[k] != 0 && bits[k] != 1) throw FormatError(path.string() + ": mask entries must be 0 or 1");
                keep[k] = bits[k];
            }
            m.layers.emplace(i, DropMask{Tensor(raw.shape, std::move(keep))});
        }
    }
    if (used != c.tensors.size()) throw FormatError(path.string() + ": member file has unrecognised tensors");
    return m;
}

std::string file_kind(const fs::path& path) {
    try {
        return read_container(path).header.value("kind", std::string());
    } catch (const FormatError&) {
        return {};
    }
}

Checkpoint load_model(const fs::path& path) {
    const Container c = read_container(path);
    const std::string kind = c.header.value("kind", std::string());
    if (kind == "checkpoint") return load_checkpoint(path);
    if (kind != "member") throw FormatError(path.string() + ": not a checkpoint or member file");
    MemberSet ms{std::nullopt, load_checkpoint(path.parent_path() / "shared.lpe1"), {}};
    Member m = load_member(path, ms.base.spec);
    m.index = 0;
    ms.members.push_back(std::move(m));
    return ms.materialize(0);
}

std::vector<fs::path> save_member_set(const fs::path& dir, const MemberSet& ms) {
    ms.validate();
    fs::create_directories(dir);
    std::vector<fs::path> written;

    json manifest{{"kind", "member_set"}, {"base", "shared.lpe1"}};
    if (ms.spec) {
        const auto& s = *ms.spec;
        json cfg{{"method", std::string(to_string(s.method))}, {"size", s.size}, {"base_seed", s.base_seed}};
        if (s.bits) cfg["bits"] = *s.bits;
        if (s.sigma2) cfg["sigma2"] = *s.sigma2;
        if (s.drop_p) cfg["drop_p"] = *s.drop_p;
        manifest["ensemble"] = std::move(cfg);
    }

    save_checkpoint(dir / "shared.lpe1", ms.base);
    written.push_back(dir / "shared.lpe1");
    json members = json::array();
    for (const auto& m : ms.members) {
        char name[32];
        std::snprintf(name, sizeof name, "member_%03zu.lpe1", m.index);
        save_member(dir / name, ms.base.spec, m);
        written.push_back(dir / name);
        members.push_back({{"index", m.index}, {"seed", m.seed}, {"file", name}});
    }
    manifest["members"] = std::move(members);
    write_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
    written.push_back(dir / "manifest.json");
    return written;
}

MemberSet load_member_set(const fs::path& manifest_path) {
    json manifest;
    try {
        manifest = json::parse(read_file(manifest_path));
    } catch (const json::exception& e) {
        throw FormatError(manifest_path.string() + ": unreadable manifest: " + e.what());
    }
    const fs::path dir = manifest_path.parent_path();
    MemberSet ms;
    try {
        if (manifest.value("kind", std::string()) != "member_set") {
            throw FormatError(manifest_path.string() + ": not a member-set manifest");
        }
        ms.base = load_checkpoint(dir / manifest.at("base").get<std::string>());
        if (manifest.contains("ensemble")) {
            const auto& cfg = manifest["ensemble"];
            EnsembleSpec s;
            s.method = parse_method(cfg.at("method").get<std::string>());
            s.size = cfg.at("size").get<std::size_t>();
            s.base_seed = cfg.at("base_seed").get<std::uint64_t>();
            if (cfg.contains("bits")) s.bits = cfg["bits"].get<int>();
            if (cfg.contains("sigma2")) s.sigma2 = cfg["sigma2"].get<double>();
            if (cfg.contains("drop_p")) s.drop_p = cfg["drop_p"].get<double>();
            ms.spec = s;
        }
        for (const auto& entry : manifest.at("members")) {
            Member m = load_member(dir / entry.at("file").get<std::string>(), ms.base.spec);
            if (m.index != entry.at("index").get<std::size_t>() || m.seed != entry.at("seed").get<std::uint64_t>()) {
                throw FormatError(manifest_path.string() + ": manifest and member file disagree on index or seed");
            }
            ms.members.push_back(std::move(m));
        }
    } catch (const json::exception& e) {
        throw FormatError(manifest_path.string() + ": malformed manifest: " + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(manifest_path.string() + ": " + e.what());
    }
    ms.validate();
    return ms;
}

namespace {

std::string format_float(float v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::string trim(std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && s[i] == ' ') ++i;
    return s.substr(i);
}

}  // namespace

Dataset load_dataset_csv(const fs::path& path, std::size_t num_classes) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
    const auto header = split_csv(trim(line));
    if (header.size() < 2 || trim(header.back()) != "label") {
        throw DataError(path.string() + ": header must be f0,...,f{d-1},label");
    }
    const std::size_t dim = header.size() - 1;
    for (std::size_t j = 0; j < dim; ++j) {
        if (trim(header[j]) != "f" + std::to_string(j)) {
            throw DataError(path.string() + ": expected column f" + std::to_string(j) + ", got '" + header[j] + "'");
        }
    }

    std::vector<float> features;
    std::vector<int> labels;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() != dim + 1) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(dim + 1) +
                            " columns, got " + std::to_string(cells.size()));
        }
        for (std::size_t j = 0; j < dim; ++j) {
            const std::string cell = trim(cells[j]);
            float v = 0.0f;
            auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(v)) {
                throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad feature value '" + cell + "'");
            }
            features.push_back(v);
        }
        const std::string cell = trim(cells[dim]);
        int y = 0;
        auto res = std::from_chars(cell.data(), cell.data() + cell.size(), y);
        if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || y < 0) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": label must be a non-negative integer, got '" +
                            cell + "'");
        }
        labels.push_back(y);
    }
    if (labels.empty()) throw DataError(path.string() + ": no data rows");
    const std::size_t max_label = static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end()));
    Dataset data{Tensor({labels.size(), dim}, std::move(features)), std::move(labels),
                 num_classes ? num_classes : max_label + 1};
    data.validate();
    return data;
}

void save_dataset_csv(const fs::path& path, const Dataset& data) {
    data.validate();
    std::ostringstream os;
    for (std::size_t j = 0; j < data.dim(); ++j) os << 'f' << j << ',';
    os << "label\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (float v : data.features.row(i)) os << format_float(v) << ',';
        os << data.labels[i] << '\n';
    }
    write_atomic(path, os.str());
}

Dataset make_blobs(std::size_t classes, std::size_t dim, std::size_t n_per_class, double spread, std::uint64_t seed) {
    if (classes < 2 || dim < 2) throw ConfigError("blobs need at least 2 classes and 2 dimensions");
    if (n_per_class == 0) throw ConfigError("blobs need at least one point per class");
    if (!(spread >= 0.0)) throw ConfigError("blob spread must be >= 0");
    const CounterRng center_rng(seed, 1);
    const CounterRng point_rng(seed, 2);
    std::vector<double> centers(classes * dim);
    for (std::size_t k = 0; k < centers.size(); ++k) centers[k] = -4.0 + 8.0 * center_rng.uniform(k);

    const std::size_t n = classes * n_per_class;
    Tensor features({n, dim});
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cls = i / n_per_class;
        labels[i] = static_cast<int>(cls);
        for (std::size_t j = 0; j < dim; ++j) {
            features.at(i, j) = static_cast<float>(centers[cls * dim + j] + spread * point_rng.normal(i * dim + j));
        }
    }
    return {std::move(features), std::move(labels), classes};
}

}  // namespace lpe
