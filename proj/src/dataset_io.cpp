#include "nt/dataset_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "nt/util.hpp"

static_assert(std::endian::native == std::endian::little,
              "file payloads are little-endian float64; big-endian hosts need swaps");

namespace nt {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

void write_doubles(std::ostream& out, const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::istream& in, std::size_t count, const char* what) {
    std::vector<double> v(count);
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != count * sizeof(double))
        throw std::runtime_error(std::string("truncated payload while reading ") + what);
    return v;
}

std::string ann_line(int id, const char* set_name, const Annotation& a) {
    std::ostringstream line;
    line << id << ',' << set_name << ',';
    for (std::size_t t = 0; t < a.size(); ++t) {
        if (t) line << ' ';
        line << a[t];
    }
    return line.str();
}

Annotation parse_tokens(const std::string& text, const std::string& context) {
    Annotation a;
    std::istringstream in(text);
    int tok;
    while (in >> tok) a.push_back(tok);
    if (a.empty())
        throw std::runtime_error("dataset: empty annotation in line: " + context);
    return a;
}

json parse_header_line(std::istream& in, const char* expected_format,
                       const std::string& path) {
    std::string line;
    if (!std::getline(in, line))
        throw std::runtime_error(path + ": missing header line");
    json header = json::parse(line, nullptr, /*allow_exceptions=*/true);
    if (header.value("format", "") != expected_format)
        throw std::runtime_error(path + ": not a " + expected_format + " file");
    return header;
}

}  // namespace

void write_dataset(const SparseDataset& dataset, const std::string& path) {
    dataset.validate();
    std::int64_t ann_lines = 0;
    std::ostringstream ann;
    for (int i = 0; i < dataset.size(); ++i) {
        auto idx = static_cast<std::size_t>(i);
        for (const Annotation& a : dataset.train_annotations[idx]) {
            ann << ann_line(i, "train", a) << '\n';
            ++ann_lines;
        }
        for (const Annotation& a : dataset.full_annotations[idx]) {
            ann << ann_line(i, "full", a) << '\n';
            ++ann_lines;
        }
    }

    ordered_json header;
    header["format"] = "nt-dataset";
    header["version"] = 1;
    header["generator"] = dataset.generator;
    header["task"] = task_name(dataset.task);
    header["seed"] = dataset.seed;
    header["config"] = dataset.config_json.empty()
                           ? json::object()
                           : json::parse(dataset.config_json);
    header["m"] = dataset.size();
    header["input_dim"] = dataset.input_dim;
    header["num_labels"] = dataset.num_labels;
    header["regions_per_input"] = dataset.regions_per_input;
    header["region_width"] = dataset.region_width;
    header["has_posterior"] = !dataset.true_posterior.empty();
    header["annotation_lines"] = ann_lines;
    header["split"] = dataset.split;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << header.dump() << '\n';
    for (const auto& row : dataset.features) write_doubles(out, row);
    for (const auto& row : dataset.regions) write_doubles(out, row);
    for (const auto& row : dataset.true_posterior) write_doubles(out, row);
    out << ann.str();
    if (!out) throw std::runtime_error("write failed for " + path);
}

SparseDataset read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    json header = parse_header_line(in, "nt-dataset", path);

    SparseDataset ds;
    ds.task = task_from_name(header.at("task").get<std::string>());
    ds.generator = header.at("generator").get<std::string>();
    ds.seed = header.at("seed").get<std::uint64_t>();
    ds.config_json = header.at("config").dump();
    int m = header.at("m").get<int>();
    ds.input_dim = header.at("input_dim").get<int>();
    ds.num_labels = header.at("num_labels").get<int>();
    ds.regions_per_input = header.at("regions_per_input").get<int>();
    ds.region_width = header.at("region_width").get<int>();
    ds.split = header.at("split").get<std::vector<int>>();
    if (static_cast<int>(ds.split.size()) != m)
        throw std::runtime_error(path + ": split tags do not cover all examples");

    for (int i = 0; i < m; ++i) {
        auto row = read_doubles(in, static_cast<std::size_t>(ds.input_dim), "features");
        for (std::size_t d = 0; d < row.size(); ++d)
            if (std::isnan(row[d]))
                throw std::runtime_error(path + ": NaN feature at row " +
                                         std::to_string(i) + ", column " + std::to_string(d));
        ds.features.push_back(std::move(row));
    }
    if (ds.regions_per_input > 0)
        for (int i = 0; i < m; ++i)
            ds.regions.push_back(read_doubles(
                in, static_cast<std::size_t>(ds.regions_per_input * ds.region_width),
                "regions"));
    if (header.at("has_posterior").get<bool>())
        for (int i = 0; i < m; ++i)
            ds.true_posterior.push_back(
                read_doubles(in, static_cast<std::size_t>(ds.num_labels), "posterior"));

    ds.train_annotations.resize(static_cast<std::size_t>(m));
    ds.full_annotations.resize(static_cast<std::size_t>(m));
    std::int64_t want_lines = header.at("annotation_lines").get<std::int64_t>();
    std::string line;
    std::int64_t got = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::size_t c1 = line.find(',');
        std::size_t c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            throw std::runtime_error(path + ": malformed annotation line: " + line);
        int id = std::stoi(line.substr(0, c1));
        if (id < 0 || id >= m)
            throw std::runtime_error(path + ": annotation for unknown example " + line);
        std::string set_name = line.substr(c1 + 1, c2 - c1 - 1);
        Annotation a = parse_tokens(line.substr(c2 + 1), line);
        if (set_name == "train")
            ds.train_annotations[static_cast<std::size_t>(id)].push_back(std::move(a));
        else if (set_name == "full")
            ds.full_annotations[static_cast<std::size_t>(id)].push_back(std::move(a));
        else
            throw std::runtime_error(path + ": unknown annotation set: " + set_name);
        ++got;
    }
    if (got != want_lines)
        throw std::runtime_error(path + ": expected " + std::to_string(want_lines) +
                                 " annotation lines, found " + std::to_string(got));
    ds.validate();
    return ds;
}

std::string dataset_fingerprint(const SparseDataset& dataset) {
    std::uint64_t h = fnv1a64(task_name(dataset.task));
    auto mix_rows = [&h](const std::vector<std::vector<double>>& rows) {
        for (const auto& row : rows)
            h = fnv1a64(row.data(), row.size() * sizeof(double), h);
    };
    mix_rows(dataset.features);
    mix_rows(dataset.regions);
    mix_rows(dataset.true_posterior);
    auto mix_anns = [&h](const std::vector<std::vector<Annotation>>& all) {
        for (const auto& anns : all)
            for (const Annotation& a : anns)
                h = fnv1a64(a.data(), a.size() * sizeof(int), h);
    };
    mix_anns(dataset.train_annotations);
    mix_anns(dataset.full_annotations);
    h = fnv1a64(dataset.split.data(), dataset.split.size() * sizeof(int), h);
    return hex64(h);
}

namespace {

ordered_json spec_to_json(const ModelBundle& bundle) {
    ordered_json spec;
    spec["task"] = task_name(bundle.task);
    spec["mlp"] = {{"widths", bundle.mlp.widths},
                   {"head", static_cast<int>(bundle.mlp.head)}};
    spec["projection"] = {{"input_width", bundle.projection.input_width},
                          {"hidden_width", bundle.projection.hidden_width},
                          {"output_width", bundle.projection.output_width}};
    spec["decoder"] = {{"vocab", bundle.decoder.vocab},
                       {"emb_width", bundle.decoder.emb_width},
                       {"state_width", bundle.decoder.state_width},
                       {"num_regions", bundle.decoder.num_regions},
                       {"region_width", bundle.decoder.region_width}};
    return spec;
}

void spec_from_json(const json& spec, ModelBundle& bundle) {
    bundle.task = task_from_name(spec.at("task").get<std::string>());
    bundle.mlp.widths = spec.at("mlp").at("widths").get<std::vector<int>>();
    bundle.mlp.head = static_cast<Head>(spec.at("mlp").at("head").get<int>());
    const json& p = spec.at("projection");
    bundle.projection.input_width = p.at("input_width").get<int>();
    bundle.projection.hidden_width = p.at("hidden_width").get<int>();
    bundle.projection.output_width = p.at("output_width").get<int>();
    const json& d = spec.at("decoder");
    bundle.decoder.vocab = d.at("vocab").get<int>();
    bundle.decoder.emb_width = d.at("emb_width").get<int>();
    bundle.decoder.state_width = d.at("state_width").get<int>();
    bundle.decoder.num_regions = d.at("num_regions").get<int>();
    bundle.decoder.region_width = d.at("region_width").get<int>();
}

}  // namespace

void write_checkpoint(const ModelBundle& bundle, std::int64_t step,
                      const std::string& path) {
    ordered_json header;
    header["format"] = "nt-checkpoint";
    header["version"] = 1;
    header["seed"] = bundle.seed;
    header["step"] = step;
    header["spec"] = spec_to_json(bundle);
    header["task_lr"] = bundle.task_lr;
    header["projection_lr"] = bundle.projection_lr;
    ordered_json params = ordered_json::array();
    auto describe = [&params](const ParamSet& set, const char* group) {
        for (const ParamTensor& p : set)
            params.push_back({{"group", group}, {"name", p.name}, {"shape", p.shape}});
    };
    describe(bundle.task_params, "task");
    describe(bundle.projection_params, "projection");
    header["params"] = params;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << header.dump() << '\n';
    for (const ParamTensor& p : bundle.task_params) write_doubles(out, p.value);
    for (const ParamTensor& p : bundle.projection_params) write_doubles(out, p.value);
    if (!out) throw std::runtime_error("write failed for " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    json header = parse_header_line(in, "nt-checkpoint", path);

    Checkpoint ckpt;
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    ckpt.step = header.at("step").get<std::int64_t>();
    ckpt.bundle.seed = ckpt.seed;
    spec_from_json(header.at("spec"), ckpt.bundle);
    ckpt.bundle.task_lr = header.at("task_lr").get<double>();
    ckpt.bundle.projection_lr = header.at("projection_lr").get<double>();

    for (const json& entry : header.at("params")) {
        std::string group = entry.at("group").get<std::string>();
        ParamSet& set =
            group == "task" ? ckpt.bundle.task_params : ckpt.bundle.projection_params;
        ParamTensor& p =
            set.add(entry.at("name").get<std::string>(), entry.at("shape").get<Shape>());
        p.value = read_doubles(in, p.size(), p.name.c_str());
    }
    return ckpt;
}

}  // namespace nt
