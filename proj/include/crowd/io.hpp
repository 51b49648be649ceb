#pragma once

#include <string>
#include <vector>

#include "crowd/datagen.hpp"
#include "crowd/model.hpp"
#include "crowd/points.hpp"
#include "crowd/tensor.hpp"

namespace crowd {

// 8-bit binary PGM (P5), maxval 255. Pixels quantize as round(v * 255); a
// value already on the k/255 lattice round-trips bit-exactly.
void write_pgm(const std::string& path, const Tensor& image);
Tensor read_pgm(const std::string& path);

// Point CSV: header line "x,y", then one "%.17g,%.17g" row per point
// (lossless double round trip).
void write_points_csv(const std::string& path, const PointList& points);
PointList read_points_csv(const std::string& path);

// A sample lives under a shared stem: <stem>.pgm + <stem>.csv.
void write_sample(const std::string& stem, const Sample& s);
Sample read_sample(const std::string& stem);

// Dataset directory layout: images/NNNN.pgm, points/NNNN.csv, and split.txt
// with one "NNNN train|val" line per sample.
std::string index_name(int index);  // 7 -> "0007"
void write_dataset_sample(const std::string& dir, int index, const Sample& s);
Sample read_dataset_sample(const std::string& dir, int index);

struct DatasetIndex {
  std::vector<int> train;
  std::vector<int> val;
};
void write_split(const std::string& dir, const DatasetIndex& index);
DatasetIndex read_split(const std::string& dir);

// Checkpoints: <prefix>.bin holds every parameter as raw doubles in
// declaration order; <prefix>.manifest is text, one "name offset dims..."
// line per tensor. Loading demands the exact parameter set and shapes of the
// receiving model.
void save_checkpoint(const Model& model, const std::string& prefix);
void load_checkpoint(Model& model, const std::string& prefix);

}  // namespace crowd
