#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace haar::env {

using Vec2 = Eigen::Vector2d;

enum class Cell : char { wall = '#', free = '.', start = 'S', goal = 'G' };

enum class MazeKind { c_maze, mirrored, spiral, gather, open_field, custom };

MazeKind parse_maze_kind(std::string_view name);
std::string to_string(MazeKind kind);

struct CellIndex {
  int row = 0;
  int col = 0;
  bool operator==(const CellIndex&) const = default;
};

struct Site {
  Vec2 position;
  bool food = true;
};

/// Occupancy grid. Row 0 is the top (north) row; world coordinates put the
/// origin at the south-west corner with y pointing north, so cell (r, c)
/// spans x in [c, c+1] * cell_size and y in [rows-1-r, rows-r] * cell_size.
struct MazeSpec {
  int rows = 0;
  int cols = 0;
  std::vector<Cell> grid;
  double cell_size = 4.0;
  MazeKind kind = MazeKind::custom;
  std::vector<Site> sites;

  Cell at(int r, int c) const;
  /// Out-of-range cells count as walls.
  bool is_wall(int r, int c) const;
  std::vector<CellIndex> start_cells() const;
  std::optional<CellIndex> goal_cell() const;
  Vec2 cell_center(CellIndex idx) const;
  CellIndex cell_of(const Vec2& p) const;
  bool has_goal() const { return goal_cell().has_value(); }
  bool is_maze() const { return kind != MazeKind::gather && kind != MazeKind::open_field; }

  /// Throws std::invalid_argument if the boundary is open, there is no start,
  /// or a maze-kind layout does not have exactly one goal.
  void validate() const;

  /// Caches the goal lookup, which the dynamics query every step. Builders
  /// call it; call it again after editing `grid` by hand.
  void reindex();

  bool indexed_ = false;
  std::optional<CellIndex> goal_cache_;
};

struct MazeParams {
  double cell_size = 4.0;
  /// Gather arena: interior side length and site counts.
  int gather_size = 6;
  int n_food = 8;
  int n_bombs = 8;
  std::uint64_t seed = 0;
  /// Open field: cells from the center to the boundary wall.
  int open_field_radius = 64;
};

/// Deterministic layout per kind. `mirrored` is the left-right reflection of
/// `c_maze`; `gather` draws its food and bomb sites from `params.seed`.
MazeSpec build_maze(MazeKind kind, const MazeParams& params = {});

/// One character per cell: '#' wall, '.' free, 'S' start, 'G' goal.
MazeSpec parse_maze(std::string_view text, double cell_size = 4.0);
MazeSpec load_maze_file(const std::filesystem::path& path, double cell_size = 4.0);
std::string to_text(const MazeSpec& maze);

MazeSpec mirror_left_right(const MazeSpec& maze);

}  // namespace haar::env
