// SPDX-License-Identifier: Apache-2.0
#include "fedmn/architecture.hpp"

#include <sstream>

namespace fedmn {

std::vector<int> parse_layer_widths(const std::string& s) {
    std::vector<int> widths;
    std::string part;
    std::istringstream in(s);
    while (std::getline(in, part, 'x')) {
        if (part.empty()) throw ConfigError("architecture '" + s + "': empty layer width");
        for (char ch : part)
            if (ch < '0' || ch > '9')
                throw ConfigError("architecture '" + s + "': non-numeric width '" + part + "'");
        widths.push_back(std::stoi(part));
    }
    if (widths.size() < 2)
        throw ConfigError("architecture '" + s + "': need at least 2 layers");
    for (int w : widths)
        if (w < 1) throw ConfigError("architecture '" + s + "': layer widths must be >= 1");
    return widths;
}

std::string layer_widths_string(const std::vector<int>& widths) {
    std::string out;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        if (i) out += 'x';
        out += std::to_string(widths[i]);
    }
    return out;
}

void validate(const ArchitectureSpec& spec) {
    std::string errors;
    auto bad = [&](const std::string& msg) {
        if (!errors.empty()) errors += "; ";
        errors += msg;
    };
    if (spec.layers() < 2) bad("need at least 2 layers");
    for (int w : spec.layer_widths)
        if (w < 1) {
            bad("layer widths must be >= 1");
            break;
        }
    if (spec.input_dim < 1) bad("input_dim must be >= 1");
    if (spec.encoder_out_dim < 1) bad("encoder_out_dim must be >= 1");
    if (spec.block_hidden_dim < 0) bad("block_hidden_dim must be >= 0");
    if (spec.block_out_dim < 1) bad("block_out_dim must be >= 1");
    if (spec.num_classes < 2) bad("num_classes must be >= 2");
    if (!errors.empty()) throw ConfigError("invalid architecture: " + errors);
}

int path_count(const ArchitectureSpec& spec) {
    int e = 0;
    for (int l = 1; l < spec.layers(); ++l) e += spec.width(l) * spec.width(l + 1);
    return e + spec.width(spec.layers());
}

int block_count(const ArchitectureSpec& spec) {
    int b = 0;
    for (int l = 2; l <= spec.layers(); ++l) b += spec.width(l);
    return b;
}

int pair_gate_offset(const ArchitectureSpec& spec, int l) {
    int off = 0;
    for (int i = 1; i < l; ++i) off += spec.width(i) * spec.width(i + 1);
    return off;
}

int gate_index(const ArchitectureSpec& spec, int l, int k, int j) {
    return pair_gate_offset(spec, l) + k * spec.width(l + 1) + j;
}

int output_gate_offset(const ArchitectureSpec& spec) {
    return path_count(spec) - spec.width(spec.layers());
}

int block_flat_index(const ArchitectureSpec& spec, int l, int j) {
    int off = 0;
    for (int i = 2; i < l; ++i) off += spec.width(i);
    return off + j;
}

int block_in_dim(const ArchitectureSpec& spec, int l) {
    return l == 2 ? spec.encoder_out_dim : spec.block_out_dim;
}

int block_out_dim_at(const ArchitectureSpec& spec, int l) {
    return l == spec.layers() ? spec.num_classes : spec.block_out_dim;
}

}  // namespace fedmn
