#pragma once

// Unified token vocabulary: contiguous disjoint id ranges for commands,
// BEV semantic classes, depth bins, and the special tokens.

#include <stdexcept>

#include "microdrive/scenesim.hpp"

namespace microdrive {

// BEV semantic classes ("RGB" analog).
enum class BevClass : int { kFree = 0, kOffRoad = 1, kObstacle = 2, kGoal = 3 };
inline constexpr int kNumBevClasses = 4;

struct VocabLayout {
  int n_commands = kNumCommands;
  int n_rgb = kNumBevClasses;
  int n_depth_bins = 0;

  int command_base() const { return 0; }
  int rgb_base() const { return n_commands; }
  int depth_base() const { return n_commands + n_rgb; }
  int mask_id() const { return depth_base() + n_depth_bins; }
  int pad_id() const { return mask_id() + 1; }
  int traj_id() const { return pad_id() + 1; }
  int total() const { return traj_id() + 1; }

  int encode_command(int c) const {
    if (c < 0 || c >= n_commands) throw std::out_of_range("vocab: command out of range");
    return command_base() + c;
  }
  int encode_rgb(int cls) const {
    if (cls < 0 || cls >= n_rgb) throw std::out_of_range("vocab: rgb class out of range");
    return rgb_base() + cls;
  }
  int encode_depth(int bin) const {
    if (bin < 0 || bin >= n_depth_bins) throw std::out_of_range("vocab: depth bin out of range");
    return depth_base() + bin;
  }
  int decode_command(int id) const {
    if (!is_command(id)) throw std::out_of_range("vocab: not a command id");
    return id - command_base();
  }
  int decode_rgb(int id) const {
    if (!is_rgb(id)) throw std::out_of_range("vocab: not an rgb id");
    return id - rgb_base();
  }
  int decode_depth(int id) const {
    if (!is_depth(id)) throw std::out_of_range("vocab: not a depth id");
    return id - depth_base();
  }
  bool is_command(int id) const { return id >= command_base() && id < command_base() + n_commands; }
  bool is_rgb(int id) const { return id >= rgb_base() && id < rgb_base() + n_rgb; }
  bool is_depth(int id) const { return id >= depth_base() && id < depth_base() + n_depth_bins; }

  bool operator==(const VocabLayout&) const = default;
};

}  // namespace microdrive
