from .annotations import AnnotatedImage, AnnotationError, read_annotations, write_annotations
from .ppm import PPMError, RawImage, load_ppm, read_ppm, save_ppm, write_ppm
from .synth import SynthSceneSpec, generate_dataset, oracle_mos, random_scene_spec, synth_generate
from .transforms import AugmentConfig, augment, preprocess, resized_dims
