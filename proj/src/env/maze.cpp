#include "haar/env/maze.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace haar::env {

namespace {

// "C"-shaped corridor: start on the top-left, goal behind the inner wall on
// the bottom-left.
constexpr std::string_view kCMaze =
    "#######\n"
    "#SS...#\n"
    "#####.#\n"
    "#G....#\n"
    "#######\n";

// Inward spiral ending at the center.
constexpr std::string_view kSpiral =
    "#########\n"
    "#S......#\n"
    "#######.#\n"
    "#.....#.#\n"
    "#.###.#.#\n"
    "#.#G..#.#\n"
    "#.#####.#\n"
    "#.......#\n"
    "#########\n";

MazeSpec open_box(int interior, double cell_size) {
  MazeSpec m;
  m.rows = interior + 2;
  m.cols = interior + 2;
  m.cell_size = cell_size;
  m.grid.assign(static_cast<std::size_t>(m.rows * m.cols), Cell::free);
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) {
      if (r == 0 || c == 0 || r == m.rows - 1 || c == m.cols - 1) {
        m.grid[static_cast<std::size_t>(r * m.cols + c)] = Cell::wall;
      }
    }
  }
  return m;
}

}  // namespace

MazeKind parse_maze_kind(std::string_view name) {
  if (name == "c_maze") return MazeKind::c_maze;
  if (name == "mirrored") return MazeKind::mirrored;
  if (name == "spiral") return MazeKind::spiral;
  if (name == "gather") return MazeKind::gather;
  if (name == "open_field") return MazeKind::open_field;
  if (name == "custom") return MazeKind::custom;
  throw std::invalid_argument("unknown maze kind: " + std::string(name));
}

std::string to_string(MazeKind kind) {
  switch (kind) {
    case MazeKind::c_maze: return "c_maze";
    case MazeKind::mirrored: return "mirrored";
    case MazeKind::spiral: return "spiral";
    case MazeKind::gather: return "gather";
    case MazeKind::open_field: return "open_field";
    case MazeKind::custom: return "custom";
  }
  return "custom";
}

Cell MazeSpec::at(int r, int c) const {
  if (r < 0 || c < 0 || r >= rows || c >= cols) return Cell::wall;
  return grid[static_cast<std::size_t>(r * cols + c)];
}

bool MazeSpec::is_wall(int r, int c) const { return at(r, c) == Cell::wall; }

std::vector<CellIndex> MazeSpec::start_cells() const {
  std::vector<CellIndex> out;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (at(r, c) == Cell::start) out.push_back({r, c});
    }
  }
  return out;
}

void MazeSpec::reindex() {
  indexed_ = false;
  goal_cache_ = goal_cell();
  indexed_ = true;
}

std::optional<CellIndex> MazeSpec::goal_cell() const {
  if (indexed_) return goal_cache_;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (at(r, c) == Cell::goal) return CellIndex{r, c};
    }
  }
  return std::nullopt;
}

Vec2 MazeSpec::cell_center(CellIndex idx) const {
  return {(idx.col + 0.5) * cell_size, (rows - 1 - idx.row + 0.5) * cell_size};
}

CellIndex MazeSpec::cell_of(const Vec2& p) const {
  const int c = static_cast<int>(std::floor(p.x() / cell_size));
  const int r = rows - 1 - static_cast<int>(std::floor(p.y() / cell_size));
  return {r, c};
}

void MazeSpec::validate() const {
  if (rows < 3 || cols < 3 || grid.size() != static_cast<std::size_t>(rows * cols)) {
    throw std::invalid_argument("maze grid must be at least 3x3 and rectangular");
  }
  if (!(cell_size > 0.0)) throw std::invalid_argument("maze cell_size must be positive");
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const bool boundary = r == 0 || c == 0 || r == rows - 1 || c == cols - 1;
      if (boundary && at(r, c) != Cell::wall) throw std::invalid_argument("maze boundary must be fully walled");
    }
  }
  const auto starts = start_cells();
  if (starts.empty()) throw std::invalid_argument("maze has no start cell");
  // Start cells must form one 4-connected region.
  std::vector<CellIndex> frontier{starts.front()};
  std::vector<CellIndex> seen{starts.front()};
  while (!frontier.empty()) {
    const CellIndex cur = frontier.back();
    frontier.pop_back();
    const CellIndex nbrs[4] = {{cur.row - 1, cur.col}, {cur.row + 1, cur.col}, {cur.row, cur.col - 1}, {cur.row, cur.col + 1}};
    for (const auto& n : nbrs) {
      if (at(n.row, n.col) == Cell::start && std::find(seen.begin(), seen.end(), n) == seen.end()) {
        seen.push_back(n);
        frontier.push_back(n);
      }
    }
  }
  if (seen.size() != starts.size()) throw std::invalid_argument("maze start cells must form one region");
  const auto n_goals = std::count(grid.begin(), grid.end(), Cell::goal);
  if (is_maze() && n_goals != 1) throw std::invalid_argument("maze must have exactly one goal cell");
}

MazeSpec parse_maze(std::string_view text, double cell_size) {
  MazeSpec m;
  m.cell_size = cell_size;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty()) continue;
    if (m.cols == 0) m.cols = static_cast<int>(line.size());
    if (static_cast<int>(line.size()) != m.cols) throw std::invalid_argument("maze rows must have equal length");
    for (char ch : line) {
      switch (ch) {
        case '#': m.grid.push_back(Cell::wall); break;
        case '.': m.grid.push_back(Cell::free); break;
        case 'S': m.grid.push_back(Cell::start); break;
        case 'G': m.grid.push_back(Cell::goal); break;
        default: throw std::invalid_argument(std::string("invalid maze character '") + ch + "'");
      }
    }
    ++m.rows;
  }
  m.kind = MazeKind::custom;
  m.reindex();
  m.validate();
  return m;
}

MazeSpec load_maze_file(const std::filesystem::path& path, double cell_size) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open maze file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_maze(ss.str(), cell_size);
}

std::string to_text(const MazeSpec& maze) {
  std::string out;
  for (int r = 0; r < maze.rows; ++r) {
    for (int c = 0; c < maze.cols; ++c) out.push_back(static_cast<char>(maze.at(r, c)));
    out.push_back('\n');
  }
  return out;
}

MazeSpec mirror_left_right(const MazeSpec& maze) {
  MazeSpec m = maze;
  for (int r = 0; r < maze.rows; ++r) {
    for (int c = 0; c < maze.cols; ++c) {
      m.grid[static_cast<std::size_t>(r * maze.cols + c)] = maze.at(r, maze.cols - 1 - c);
    }
  }
  const double width = maze.cols * maze.cell_size;
  for (auto& s : m.sites) s.position.x() = width - s.position.x();
  m.reindex();
  return m;
}

MazeSpec build_maze(MazeKind kind, const MazeParams& params) {
  MazeSpec m;
  switch (kind) {
    case MazeKind::c_maze:
      m = parse_maze(kCMaze, params.cell_size);
      break;
    case MazeKind::mirrored:
      m = mirror_left_right(parse_maze(kCMaze, params.cell_size));
      break;
    case MazeKind::spiral:
      m = parse_maze(kSpiral, params.cell_size);
      break;
    case MazeKind::gather: {
      if (params.gather_size < 2) throw std::invalid_argument("gather arena too small");
      m = open_box(params.gather_size, params.cell_size);
      const int center = (params.gather_size + 1) / 2;
      m.grid[static_cast<std::size_t>(center * m.cols + center)] = Cell::start;
      std::vector<CellIndex> candidates;
      for (int r = 1; r < m.rows - 1; ++r) {
        for (int c = 1; c < m.cols - 1; ++c) {
          if (m.at(r, c) == Cell::free) candidates.push_back({r, c});
        }
      }
      const auto n_sites = static_cast<std::size_t>(params.n_food + params.n_bombs);
      if (candidates.size() < n_sites) throw std::invalid_argument("gather arena cannot hold all sites");
      std::mt19937_64 rng(params.seed);
      for (std::size_t i = 0; i < n_sites; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
        std::swap(candidates[i], candidates[pick(rng)]);
        m.sites.push_back({m.cell_center(candidates[i]), i < static_cast<std::size_t>(params.n_food)});
      }
      break;
    }
    case MazeKind::open_field: {
      if (params.open_field_radius < 1) throw std::invalid_argument("open field radius must be >= 1");
      m = open_box(2 * params.open_field_radius - 1, params.cell_size);
      const int center = params.open_field_radius;
      m.grid[static_cast<std::size_t>(center * m.cols + center)] = Cell::start;
      break;
    }
    case MazeKind::custom:
      throw std::invalid_argument("custom mazes are loaded from a text file");
  }
  m.kind = kind;
  m.reindex();
  m.validate();
  return m;
}

}  // namespace haar::env
