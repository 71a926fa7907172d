#pragma once

#include <string>

namespace synth {

// Writes a small self-contained map corpus under dir: PPM scans, PGM masks,
// metadata.csv, coverage.csv, city_attributes.csv and a config.toml tuned so
// every pipeline stage has enough data to run. Deterministic for a given
// (dir-independent) n_maps.
void write_corpus(const std::string& dir, int n_maps = 40);

}  // namespace synth
