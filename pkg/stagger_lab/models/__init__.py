from .panel import (
    DesignSummary,
    EventIndex,
    EventWindow,
    Panel,
    PanelRow,
    build_panel,
    cohort_horizons,
    design_summary,
    event_index,
    horizon_cohorts,
    panel_from_frame,
    panel_to_frame,
    read_panel_csv,
    write_panel_csv,
)

__all__ = [
    'DesignSummary',
    'EventIndex',
    'EventWindow',
    'Panel',
    'PanelRow',
    'build_panel',
    'cohort_horizons',
    'design_summary',
    'event_index',
    'horizon_cohorts',
    'panel_from_frame',
    'panel_to_frame',
    'read_panel_csv',
    'write_panel_csv',
]
