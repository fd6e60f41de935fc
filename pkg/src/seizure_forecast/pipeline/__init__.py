from .archive import read_archive, write_archive
from .dataset import build_splits, ingest_corpus, windows_for_recording
from .scaling import RobustScale, fit_robust_scale, robust_scale
from .series import (
    MODEL_CHANNELS,
    ChannelSeries,
    PatientRecording,
    SeizureAnnotation,
    acc_magnitude,
    ingest_patient,
    resample,
    write_patient,
)
from .split import SplitSet, split
from .synthetic import PatientProfile, load_profiles, synth_generate
from .windows import Sample, SampleSet, WindowParams, label_windows

__all__ = [
    "MODEL_CHANNELS", "ChannelSeries", "PatientProfile", "PatientRecording", "RobustScale", "Sample",
    "SampleSet", "SeizureAnnotation", "SplitSet", "WindowParams", "acc_magnitude", "build_splits",
    "fit_robust_scale", "ingest_corpus", "ingest_patient", "label_windows", "load_profiles",
    "read_archive", "resample", "robust_scale", "split", "synth_generate", "windows_for_recording",
    "write_archive", "write_patient",
]
