#pragma once

#include "coordatt/blocks.hpp"

#include <string>

namespace coordatt {

std::string act_name(Act a);
Act act_from_name(const std::string& name);   // throws on unknown name

// Versioned JSON network description. Either a preset reference
// ({"version":1,"preset":"mobilenetv2-1.0","attention":{...}}) or an explicit
// document (name, width_multiplier, input_shape, use_batchnorm, stem, head,
// blocks[], optional global attention). Unknown fields and malformed values
// are rejected with the offending field path; never crashes on arbitrary
// bytes.
NetworkSpec parse_spec(const std::string& document);
NetworkSpec load_spec(const std::string& path);
std::string spec_to_json(const NetworkSpec& spec);

// Binary weight container: magic "CAW1", format version u32, tensor count
// u32, then per tensor name length u32 + name bytes, rank u32, extents
// u32*rank, payload as little-endian f32. All integers little-endian.
// Includes BN running statistics, so eval-mode behavior round-trips.
void save_weights(Network& net, const std::string& path);
// The target network must already have the file's exact parameter name set
// and shapes; offenders are listed in the error.
void load_weights(const std::string& path, Network& net);

} // namespace coordatt
