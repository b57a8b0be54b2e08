// SPDX-License-Identifier: Apache-2.0
#include "fedmn/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace fedmn {

namespace {

constexpr const char* kMagic = "fedmn-pool v1";

std::vector<const Parameter*> ordered_params(const ModulePool& pool) {
    std::vector<const Parameter*> out;
    // const view over the same order as ModulePool::all_params()
    auto& mutable_pool = const_cast<ModulePool&>(pool);
    for (Parameter* p : mutable_pool.all_params()) out.push_back(p);
    return out;
}

}  // namespace

void save_pool(const std::string& path, const ModulePool& pool) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out << kMagic << "\n";
    out << "arch " << layer_widths_string(pool.spec.layer_widths) << " " << pool.spec.input_dim
        << " " << pool.spec.encoder_out_dim << " " << pool.spec.block_hidden_dim << " "
        << pool.spec.block_out_dim << " " << pool.spec.num_classes << "\n";
    out << "hyp " << pool.hyp.dims.dx << " " << pool.hyp.dims.dy << " " << pool.hyp.dims.hidden
        << "\n";
    char buf[64];
    for (const Parameter* p : ordered_params(pool)) {
        out << "param " << p->name << " " << p->value.rows() << " " << p->value.cols() << "\n";
        for (Eigen::Index r = 0; r < p->value.rows(); ++r) {
            for (Eigen::Index c = 0; c < p->value.cols(); ++c) {
                std::snprintf(buf, sizeof buf, "%.17g", p->value(r, c));
                out << buf << (c + 1 == p->value.cols() ? "" : " ");
            }
            out << "\n";
        }
    }
    out << "end\n";
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

ModulePool load_pool(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    std::string line;
    if (!std::getline(in, line) || line != kMagic)
        throw IoError("checkpoint " + path + ": bad magic line");

    ArchitectureSpec spec;
    HypernetDims dims;
    {
        std::string tag, widths;
        if (!(in >> tag >> widths >> spec.input_dim >> spec.encoder_out_dim >>
              spec.block_hidden_dim >> spec.block_out_dim >> spec.num_classes) ||
            tag != "arch")
            throw IoError("checkpoint " + path + ": bad arch line");
        spec.layer_widths = parse_layer_widths(widths);
        if (!(in >> tag >> dims.dx >> dims.dy >> dims.hidden) || tag != "hyp")
            throw IoError("checkpoint " + path + ": bad hyp line");
    }

    ModulePool pool = init_pool(spec, dims, 0);
    std::map<std::string, Parameter*> by_name;
    for (Parameter* p : pool.all_params()) by_name[p->name] = p;
    std::map<std::string, bool> seen;

    std::string tag;
    while (in >> tag) {
        if (tag == "end") {
            for (const auto& [name, p] : by_name)
                if (!seen[name]) throw IoError("checkpoint " + path + ": missing values for " + name);
            return pool;
        }
        if (tag != "param") throw IoError("checkpoint " + path + ": expected 'param', got '" + tag + "'");
        std::string name;
        Eigen::Index rows = 0, cols = 0;
        if (!(in >> name >> rows >> cols))
            throw IoError("checkpoint " + path + ": bad param line");
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw IoError("checkpoint " + path + ": unknown parameter '" + name + "'");
        Parameter* p = it->second;
        if (p->value.rows() != rows || p->value.cols() != cols)
            throw IoError("checkpoint " + path + ": parameter '" + name + "' has shape " +
                          std::to_string(rows) + "x" + std::to_string(cols) + ", expected " +
                          shape_str(p->value));
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c)
                if (!(in >> p->value(r, c)))
                    throw IoError("checkpoint " + path + ": truncated values for '" + name + "'");
        seen[name] = true;
    }
    throw IoError("checkpoint " + path + ": missing end marker");
}

}  // namespace fedmn
