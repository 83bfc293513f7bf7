pub mod grid_scan;
