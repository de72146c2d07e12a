from palp_lab.evalkit.dataset import (
    AttributeSpec,
    Dataset,
    Placement,
    gen_dataset,
    render,
    render_subject,
    subject_images,
    to_image_space,
    to_model_space,
)
from palp_lab.evalkit.oracles import (
    background_whiteness,
    calibrate_oracles,
    classify,
    subject_sim,
    text_align_score,
)
from palp_lab.evalkit.probe import ProbeStrip, nearest_mse, x0hat_probe
from palp_lab.evalkit.report import (
    ReportError,
    merge_metrics,
    read_metrics_csv,
    render_grid,
    report,
    write_grid,
    write_metrics_csv,
)

__all__ = [
    "AttributeSpec", "Dataset", "Placement", "ProbeStrip", "ReportError", "background_whiteness",
    "calibrate_oracles", "classify", "gen_dataset", "merge_metrics", "nearest_mse", "read_metrics_csv",
    "render", "render_grid", "render_subject", "report", "subject_images", "subject_sim",
    "text_align_score", "to_image_space", "to_model_space", "write_grid", "write_metrics_csv", "x0hat_probe",
]
