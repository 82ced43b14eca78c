#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dmplug {

// Rejected experiment configuration; the message names the offending line or
// field. Maps to exit code 2 at the command line.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ScheduleConfig {
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
};

struct PriorConfig {
    // "smooth" (analytic low-frequency image prior), "isotropic" (analytic
    // standard normal), or "checkpoint" (trained weights from `path`)
    std::string kind = "smooth";
    int rank = 12;           // smooth: number of cosine modes
    double strength = 0.12;  // smooth: per-mode standard deviation
    std::string path;        // checkpoint file
};

struct OperatorConfig {
    int factor = 2;              // sr: downsampling factor
    double drop_fraction = 0.3;  // inpaint: masked-out pixel fraction
    int kernel_side = 9;         // blur kernels (bid uses blind_side)
    double kernel_sigma = 1.5;
    double gamma = 2.2;          // nblur exponent
    int blind_side = 5;          // bid/turbulence: recovered kernel side
    double max_tilt = 2.0;       // turbulence: displacement clamp, pixels
    double tilt_strength = 0.5;  // turbulence: true tilt spread, pixels
};

struct NoiseConfig {
    // "default" resolves per task: gaussian_sigma 0.08 for denoise/regress,
    // clean measurements otherwise. Other values: "none", "gaussian_sigma",
    // "gaussian_var", "impulse", "shot", "speckle".
    std::string kind = "default";
    std::string level = "low"; // preset picker: "low" or "high"
    double param = -1.0;       // explicit parameter; >= 0 wins over level
};

struct EsSettings {
    bool enabled = true;
    int window = -1;   // -1: per-task default
    int patience = -1; // -1: per-task default
};

struct SolverSettings {
    std::string optimizer = "adam"; // or "lbfgs"
    int max_iters = 2000;
    double lr_z = 1e-2;
    double lr_logits = 1e-1;
    double lr_tilt = 1e-7;
    int metrics_every = 1;
    bool record_fbe = false;
    EsSettings es;
};

struct BaselineSettings {
    double zeta_prime = 1.0;
    std::string variant = "gradient"; // or "projection"
    int substeps = 0;                 // 0: every schedule step
};

struct TrainSettings {
    int steps = 1000;
    int batch = 16;
    double lr = 1e-3;
    std::vector<int> widths = {128, 128, 128};
    int embed_dim = 16;
    int count = 64; // fixture images to train on
};

struct SampleSettings {
    int count = 4;
};

struct SpectraSettings {
    std::string image;     // input path (.pfm/.pgm); empty: fixture image 0
    std::string reference; // optional reference for band-error reporting
};

struct ExperimentConfig {
    std::string task = "denoise"; // sr | inpaint | nblur | bid | turbulence
                                  // | regress | denoise
    uint64_t seed = 0;
    std::string out = "out";
    int side = 16;    // image side for image tasks
    int substeps = 3; // reverse-chain steps used by the solver
    ScheduleConfig schedule;
    PriorConfig prior;
    OperatorConfig op;
    NoiseConfig noise;
    SolverSettings solver;
    BaselineSettings baseline;
    TrainSettings train;
    SampleSettings sample;
    SpectraSettings spectra;
};

// Parse a JSON config document. Every field is optional (defaults above);
// unknown keys anywhere, type mismatches, and out-of-range values throw
// ConfigError naming the field, and syntax errors name the line.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Canonical JSON echo of a resolved config: fixed key order, suitable for
// byte-identical reproducibility checks.
std::string config_to_json(const ExperimentConfig& cfg);

// Range/consistency checks shared by parsing and programmatic construction.
void validate_config(const ExperimentConfig& cfg);

} // namespace dmplug
