#pragma once

#include "dmplug/prior.hpp"
#include "dmplug/schedule.hpp"
#include "dmplug/tensor.hpp"

#include <stdexcept>
#include <string>

namespace dmplug {

// Malformed or inconsistent files on disk.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Checkpoint {
    NeuralScore net;
    NoiseSchedule schedule;
};

// Binary container: "DMPLUG1" magic, a length-prefixed metadata document
// (dimensions, widths, tensor manifest with byte offsets), then raw
// little-endian 64-bit float payloads in manifest order. Loading a saved
// model reproduces its outputs bitwise.
void save_checkpoint(const std::string& path, const NeuralScore& net,
                     const NoiseSchedule& schedule);
Checkpoint load_checkpoint(const std::string& path);

// 8-bit binary PGM for viewing: values clipped to [0,1] and scaled to 0..255.
void save_pgm(const std::string& path, const Tensor& img);
Tensor load_pgm(const std::string& path);

// 32-bit float PFM (little-endian, bottom-up rows) for lossless round trips
// up to the float narrowing.
void save_pfm(const std::string& path, const Tensor& img);
Tensor load_pfm(const std::string& path);

} // namespace dmplug
