from .contours import Contour, filter_contours, find_contours, polygon_area, teh_chin, trace_borders
from .extract import ExtractConfig, adaptive_binarize, diff_image, extract_gt_mask, window_sums, write_panels
from .hull import convex_hull, fill_polygon, sklansky_scan

__all__ = [
    "Contour", "filter_contours", "find_contours", "polygon_area", "teh_chin", "trace_borders",
    "ExtractConfig", "adaptive_binarize", "diff_image", "extract_gt_mask", "window_sums", "write_panels",
    "convex_hull", "fill_polygon", "sklansky_scan",
]
