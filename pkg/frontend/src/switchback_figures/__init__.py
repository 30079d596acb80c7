from .render import (FigureSpec, PlottedData, SchemaMismatch, build_figure,
                     read_csv_columns, render, render_all)

__all__ = ["FigureSpec", "PlottedData", "SchemaMismatch", "build_figure",
           "read_csv_columns", "render", "render_all"]
