#include "mmref/checkpoint.hpp"

#include <fstream>
#include <map>
#include <set>

#include "mmref/binary_io.hpp"

namespace mmref {
namespace {

constexpr char kMagic[5] = "MRCK";
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kParameter = 0, kFirstMoment = 1, kSecondMoment = 2;

struct ManifestEntry {
    std::uint8_t group;
    std::string name;
    Shape shape;
    std::uint64_t offset;
};

}  // namespace

Checkpoint capture_checkpoint(Model& model, const Adam& optimizer, std::uint64_t seed, std::uint64_t step) {
    Checkpoint c;
    c.seed = seed;
    c.step = step;
    c.optimizer_step = optimizer.step_count();
    for (Parameter* p : model.parameters()) c.parameters.push_back(NamedArray{p->name, p->value});
    for (const auto& [name, moments] : optimizer.moments()) {
        c.first_moments.push_back(NamedArray{name, moments.first});
        c.second_moments.push_back(NamedArray{name, moments.second});
    }
    return c;
}

void restore_checkpoint(const Checkpoint& ckpt, Model& model, Adam& optimizer) {
    ParameterList params = model.parameters();
    std::map<std::string, Parameter*> by_name;
    for (Parameter* p : params) by_name.emplace(p->name, p);
    if (ckpt.parameters.size() != params.size()) {
        throw FormatError("checkpoint: " + std::to_string(ckpt.parameters.size()) + " parameters, model has " +
                          std::to_string(params.size()));
    }
    for (const NamedArray& a : ckpt.parameters) {
        auto it = by_name.find(a.name);
        if (it == by_name.end()) throw FormatError("checkpoint: unknown parameter '" + a.name + "'");
        if (!a.value.same_shape(it->second->value)) {
            throw ShapeError("checkpoint: parameter '" + a.name + "' has shape " + shape_string(a.value.shape()) +
                             ", model expects " + shape_string(it->second->value.shape()));
        }
    }
    if (ckpt.first_moments.size() != ckpt.second_moments.size()) throw FormatError("checkpoint: unpaired moments");
    std::map<std::string, MomentPair> moments;
    for (std::size_t i = 0; i < ckpt.first_moments.size(); ++i) {
        const NamedArray& m = ckpt.first_moments[i];
        const NamedArray& v = ckpt.second_moments[i];
        auto it = by_name.find(m.name);
        if (m.name != v.name || it == by_name.end() || !m.value.same_shape(it->second->value) ||
            !v.value.same_shape(it->second->value)) {
            throw FormatError("checkpoint: optimizer moments for '" + m.name + "' do not match the model");
        }
        moments.emplace(m.name, MomentPair{m.value, v.value});
    }
    for (const NamedArray& a : ckpt.parameters) {
        Parameter* p = by_name.at(a.name);
        p->value = a.value;
        p->zero_grad();
    }
    optimizer.restore(ckpt.optimizer_step, std::move(moments));
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
    using namespace binary;
    std::vector<std::pair<std::uint8_t, const NamedArray*>> entries;
    for (const auto& a : ckpt.parameters) entries.emplace_back(kParameter, &a);
    for (const auto& a : ckpt.first_moments) entries.emplace_back(kFirstMoment, &a);
    for (const auto& a : ckpt.second_moments) entries.emplace_back(kSecondMoment, &a);

    out.write(kMagic, 4);
    write_le<std::uint32_t>(out, kVersion);
    write_le<std::uint64_t>(out, ckpt.seed);
    write_le<std::uint64_t>(out, ckpt.step);
    write_le<std::int64_t>(out, ckpt.optimizer_step);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
    std::uint64_t offset = 0;
    for (const auto& [group, a] : entries) {
        write_le<std::uint8_t>(out, group);
        write_string(out, a->name);
        write_le<std::uint32_t>(out, static_cast<std::uint32_t>(a->value.rank()));
        for (auto dim : a->value.shape()) write_le<std::uint64_t>(out, dim);
        write_le<std::uint64_t>(out, offset);
        offset += a->value.size() * sizeof(double);
    }
    for (const auto& [group, a] : entries) {
        for (double v : a->value.values()) write_le<double>(out, v);
    }
    if (!out) throw FormatError("write_checkpoint: stream failure");
}

Checkpoint read_checkpoint(std::istream& in) {
    using namespace binary;
    expect_magic(in, kMagic);
    const auto version = read_le<std::uint32_t>(in);
    if (version != kVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint c;
    c.seed = read_le<std::uint64_t>(in);
    c.step = read_le<std::uint64_t>(in);
    c.optimizer_step = read_le<std::int64_t>(in);
    const auto count = read_le<std::uint32_t>(in);
    std::vector<ManifestEntry> manifest;
    std::uint64_t expected_offset = 0;
    std::set<std::pair<std::uint8_t, std::string>> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        ManifestEntry e;
        e.group = read_le<std::uint8_t>(in);
        if (e.group > kSecondMoment) throw FormatError("checkpoint: bad entry group");
        e.name = read_string(in);
        if (!seen.emplace(e.group, e.name).second) throw FormatError("checkpoint: duplicate entry '" + e.name + "'");
        const auto rank = read_le<std::uint32_t>(in);
        if (rank == 0 || rank > 8) throw FormatError("checkpoint: bad rank for '" + e.name + "'");
        for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(static_cast<std::size_t>(read_le<std::uint64_t>(in)));
        e.offset = read_le<std::uint64_t>(in);
        if (e.offset != expected_offset) throw FormatError("checkpoint: non-contiguous offset for '" + e.name + "'");
        expected_offset += shape_volume(e.shape) * sizeof(double);
        manifest.push_back(std::move(e));
    }
    for (const ManifestEntry& e : manifest) {
        std::vector<double> values(shape_volume(e.shape));
        for (double& v : values) v = read_le<double>(in);
        NamedArray a{e.name, Tensor(e.shape, std::move(values))};
        (e.group == kParameter ? c.parameters : e.group == kFirstMoment ? c.first_moments : c.second_moments)
            .push_back(std::move(a));
    }
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes");
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    return read_checkpoint(in);
}

}  // namespace mmref
