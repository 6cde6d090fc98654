"""Paired sketch/photo datasets: synthetic generation, directory I/O, augmentation and triplet sampling."""

import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.ndimage as ndimage
from PIL import Image, ImageDraw

from sketchkd.helpers import handle_error
from sketchkd.exceptions import DatasetError


SHAPE_KINDS = ("ellipse", "rectangle", "triangle")

# Rasterisation oversampling factor for anti-aliasing
SUPERSAMPLE = 4


@dataclass
class Instance:
    """One photo and its sketches. Unlabelled instances have no sketches.

    Images are float32 arrays [H, W, 3] with values in [0, 1].
    """
    instance_id: str
    class_id: str
    photo: np.ndarray
    sketches: List[np.ndarray] = field(default_factory=list)

    # Shapes the synthetic generator drew; None for loaded images
    layout: Optional[list] = None

    @property
    def is_labelled(self):
        return len(self.sketches) > 0


@dataclass
class LoadReport:
    labelled: int = 0
    unlabelled: int = 0
    skipped: int = 0

    def to_text(self):
        return "labelled: {0}\nunlabelled: {1}\nskipped: {2}\n".format(self.labelled, self.unlabelled, self.skipped)


class SketchPhotoDataset:
    """An immutable collection of instances, kept in instance-id order.

    Parameters
    ----------
    instances : list of Instance

    report : LoadReport, optional
        Counts gathered while loading from disk.
    """

    def __init__(self, instances, report=None):

        self._instances = sorted(instances, key=lambda instance: instance.instance_id)
        self._by_id = {}
        for instance in self._instances:
            if instance.instance_id in self._by_id:
                raise DatasetError("Instance id '{0}' appears more than once.".format(instance.instance_id))
            self._by_id[instance.instance_id] = instance

        self.report = report if report is not None else LoadReport(labelled=len(self.labelled), unlabelled=len(self.unlabelled))


    def __len__(self):
        return len(self._instances)


    def __getitem__(self, instance_id):
        return self._by_id[instance_id]


    @property
    def instances(self):
        return list(self._instances)


    @property
    def labelled(self):
        """Instances with at least one sketch (D_L)."""
        return [instance for instance in self._instances if instance.is_labelled]


    @property
    def unlabelled(self):
        """Photo-only instances (D_U)."""
        return [instance for instance in self._instances if not instance.is_labelled]


    @property
    def class_ids(self):
        return sorted({instance.class_id for instance in self._instances})


    @property
    def image_size(self):
        if len(self._instances) == 0:
            return None
        return self._instances[0].photo.shape[0]


    def photo_pool(self):
        """Photos of every instance (G = D_U and the photos of D_L), keyed by instance id."""
        return {instance.instance_id : instance.photo for instance in self._instances}


    def subset(self, instance_ids):
        """Returns a dataset holding only the given instances."""
        return SketchPhotoDataset([self._by_id[instance_id] for instance_id in instance_ids])


    def filter_classes(self, class_ids):
        class_ids = set(class_ids)
        return SketchPhotoDataset([instance for instance in self._instances if instance.class_id in class_ids])


    def as_unlabelled(self):
        """Returns a copy with every sketch dropped."""
        return SketchPhotoDataset([Instance(instance.instance_id, instance.class_id, instance.photo, [], layout=instance.layout) for instance in self._instances])


    def merge(self, other):
        return SketchPhotoDataset(self.instances+other.instances)


@dataclass
class TripletBatch:
    """Aligned rows of labelled triplets. Images are arrays [B, H, W, 3].

    Per row, positive_photo is the paired photo of anchor_sketch, negative_photo and
    negative_sketch come from another instance, positive_sketch is a sibling sketch
    of the anchor and augmented_photo is an augmentation of positive_photo.
    """
    anchor_sketch: np.ndarray
    positive_photo: np.ndarray
    negative_photo: np.ndarray
    positive_sketch: np.ndarray
    negative_sketch: np.ndarray
    augmented_photo: np.ndarray
    anchor_ids: List[str]
    negative_ids: List[str]
    anchor_sketch_index: List[int]
    positive_sketch_index: List[int]

    def __len__(self):
        return len(self.anchor_ids)


@dataclass
class PhotoTripletBatch:
    """Aligned rows of photo-only triplets (anchor, its augmentation, another photo)."""
    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray
    anchor_ids: List[str]
    negative_ids: List[str]

    def __len__(self):
        return len(self.anchor_ids)


def _random_layout(rng):
    # 2-4 primitive shapes, each as a polygon of control points in unit coordinates
    layout = []
    for _ in range(int(rng.integers(2, 5))):
        kind = SHAPE_KINDS[int(rng.integers(len(SHAPE_KINDS)))]
        center = rng.uniform(0.28, 0.72, size=2)
        half = rng.uniform(0.1, 0.22, size=2)
        angle = rng.uniform(0.0, np.pi)

        if kind == "ellipse":
            t = np.linspace(0.0, 2.0*np.pi, 24, endpoint=False)
            points = np.stack([half[0]*np.cos(t), half[1]*np.sin(t)], axis=1)
        elif kind == "rectangle":
            points = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])*half
        else:
            t = np.array([0.5*np.pi, 0.5*np.pi+2.0*np.pi/3.0, 0.5*np.pi+4.0*np.pi/3.0])
            points = np.stack([half[0]*np.cos(t), half[0]*np.sin(t)], axis=1)

        rotation = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        layout.append((kind, points@rotation.T+center))

    return layout


def _class_palette(rng, n_colors=4):
    # Background plus fill colours, all float RGB in [0, 1]
    background = rng.uniform(0.75, 0.95, size=3)
    fills = rng.uniform(0.05, 0.8, size=(n_colors, 3))
    return background, fills


def _downsample(image, image_size):
    return np.asarray(image.resize((image_size, image_size), Image.BOX), dtype=np.float32)/255.0


def render_photo(layout, palette, image_size, rng, noise=0.03):
    """Renders a filled, anti-aliased rendering of the layout with texture noise."""
    big = image_size*SUPERSAMPLE
    background, fills = palette
    image = Image.new("RGB", (big, big), tuple(int(round(255*c)) for c in background))
    draw = ImageDraw.Draw(image)
    for i, (_, points) in enumerate(layout):
        color = tuple(int(round(255*c)) for c in fills[i % len(fills)])
        draw.polygon([tuple(p) for p in points*big], fill=color)

    photo = _downsample(image, image_size)
    photo = photo+rng.normal(0.0, noise, size=photo.shape).astype(np.float32)
    return np.clip(photo, 0.0, 1.0).astype(np.float32)


def render_contour(layout, image_size, rng=None, jitter=0.0):
    """Renders black contours of the layout on white, without colour or texture.

    Parameters
    ----------
    jitter : float
        Standard deviation of the control-point noise, as a fraction of the image side.
    """
    big = image_size*SUPERSAMPLE
    image = Image.new("L", (big, big), 255)
    draw = ImageDraw.Draw(image)
    for _, points in layout:
        if jitter > 0.0:
            points = points+rng.normal(0.0, jitter, size=points.shape)
        outline = [tuple(p) for p in points*big]
        draw.line(outline+[outline[0]], fill=0, width=max(1, SUPERSAMPLE))

    gray = _downsample(image, image_size)
    return np.repeat(gray[:, :, np.newaxis], 3, axis=2)


def generate_synthetic(n_instances, n_classes, sketches_per_instance, seed, **kwargs):
    """Generates a synthetic paired sketch/photo dataset.

    Each instance is a composition of 2-4 primitive shapes. Its photo is a filled,
    textured rendering in its class palette; each of its sketches is a contour
    rendering with independent stroke jitter.

    Parameters
    ----------
    n_instances : int
        Number of labelled instances.

    n_classes : int
        Number of classes. Instances are assigned to classes cyclically.

    sketches_per_instance : int
        Sketches per labelled instance. Must be at least 2.

    seed : int
        Generation seed. Equal seeds give bit-identical datasets.

    n_unlabelled : int, optional
        Number of additional photo-only instances. Defaults to 0.

    image_size : int, optional
        Side of the square images. Defaults to 32.

    jitter : float, optional
        Stroke control-point noise as a fraction of the side. Defaults to 0.015.

    noise : float, optional
        Photo texture noise standard deviation. Defaults to 0.03.

    Returns
    -------
    SketchPhotoDataset
    """

    n_unlabelled = kwargs.get("n_unlabelled", 0)
    image_size = kwargs.get("image_size", 32)
    jitter = kwargs.get("jitter", 0.015)
    noise = kwargs.get("noise", 0.03)

    if sketches_per_instance < 2:
        raise DatasetError("sketches_per_instance must be at least 2 (the sketch intra-modal triplet needs two sketches), got {0}.".format(sketches_per_instance))
    if n_classes < 1 or n_instances < n_classes:
        raise DatasetError("Need n_instances >= n_classes >= 1, got {0} instances and {1} classes.".format(n_instances, n_classes))

    rng = np.random.default_rng(seed)
    palettes = [_class_palette(rng) for _ in range(n_classes)]

    instances = []
    for i in range(n_instances+n_unlabelled):
        labelled = i < n_instances
        c = i % n_classes
        layout = _random_layout(rng)
        photo = render_photo(layout, palettes[c], image_size, rng, noise=noise)
        sketches = []
        if labelled:
            sketches = [render_contour(layout, image_size, rng, jitter=jitter) for _ in range(sketches_per_instance)]
        instance_id = "i{0:04d}".format(i) if labelled else "u{0:04d}".format(i-n_instances)
        instances.append(Instance(instance_id, "c{0:02d}".format(c), photo, sketches, layout=layout))

    return SketchPhotoDataset(instances)


def _border_mean(photo):
    border = np.concatenate([photo[0], photo[-1], photo[1:-1, 0], photo[1:-1, -1]], axis=0)
    return border.mean(axis=0)


def _homography(src, dst):
    # Solves for H with dst ~ H @ src (homogeneous), h33 = 1
    A = []
    b = []
    for (x, y), (u, v) in zip(src, dst):
        A.append([x, y, 1.0, 0.0, 0.0, 0.0, -u*x, -u*y])
        A.append([0.0, 0.0, 0.0, x, y, 1.0, -v*x, -v*y])
        b.extend([u, v])
    h = np.linalg.solve(np.array(A), np.array(b))
    return np.append(h, 1.0).reshape(3, 3)


def structural_augment(photo, rng, **kwargs):
    """Rotates then perspective-warps a photo, leaving colour and texture untouched.

    Parameters
    ----------
    photo : ndarray
        Image [H, W, 3] in [0, 1].

    rng : numpy.random.Generator
        Source of the random rotation and corner shifts.

    max_rotation : float, optional
        Rotation angle is uniform in [-max_rotation, max_rotation] degrees. Defaults to 45.

    perspective_strength : float, optional
        Each image corner is displaced independently, uniform in +/- this fraction
        of the side. Defaults to 0.1.

    angle : float, optional
        Fixed rotation in degrees, bypassing rng.

    corner_shifts : ndarray, optional
        Fixed corner displacements [4, 2] as fractions of the side, bypassing rng.

    Returns
    -------
    ndarray
        Warped image of the same shape. Out-of-frame pixels take the mean colour of
        the input border.
    """

    max_rotation = kwargs.get("max_rotation", 45.0)
    strength = kwargs.get("perspective_strength", 0.1)
    angle = kwargs.get("angle", None)
    shifts = kwargs.get("corner_shifts", None)
    if angle is None:
        angle = rng.uniform(-max_rotation, max_rotation)
    if shifts is None:
        shifts = rng.uniform(-strength, strength, size=(4, 2))
    shifts = np.asarray(shifts, dtype=float)

    if angle == 0.0 and not shifts.any():
        return photo.copy()

    H, W = photo.shape[:2]
    corners = np.array([[0.0, 0.0], [W-1.0, 0.0], [W-1.0, H-1.0], [0.0, H-1.0]])
    moved = corners+shifts*np.array([W, H])

    # Inverse map: output pixel -> pre-perspective pixel -> pre-rotation pixel
    H_inv = _homography(moved, corners)
    ys, xs = np.mgrid[0:H, 0:W].astype(float)
    ones = np.ones_like(xs)
    mapped = np.einsum("ij,jhw->ihw", H_inv, np.stack([xs, ys, ones]))
    px = mapped[0]/mapped[2]
    py = mapped[1]/mapped[2]

    theta = np.radians(angle)
    cx = (W-1.0)/2.0
    cy = (H-1.0)/2.0
    src_x = cx+np.cos(theta)*(px-cx)+np.sin(theta)*(py-cy)
    src_y = cy-np.sin(theta)*(px-cx)+np.cos(theta)*(py-cy)

    fill = _border_mean(photo)
    out = np.empty_like(photo)
    for c in range(photo.shape[2]):
        out[:, :, c] = ndimage.map_coordinates(photo[:, :, c], [src_y, src_x], order=1, mode="constant", cval=float(fill[c]))

    return np.clip(out, 0.0, 1.0).astype(photo.dtype)


def color_augment(photo, rng, **kwargs):
    """Colour distortion: random per-channel gain, brightness shift and saturation change."""
    gain = rng.uniform(0.6, 1.4, size=3)
    shift = rng.uniform(-0.1, 0.1)
    saturation = rng.uniform(0.5, 1.5)
    gray = photo.mean(axis=2, keepdims=True)
    out = gray+saturation*(photo-gray)
    out = out*gain+shift
    return np.clip(out, 0.0, 1.0).astype(photo.dtype)


def blur_augment(photo, rng, **kwargs):
    """Partial blurring: Gaussian blur over a random rectangle covering about half the image."""
    H, W = photo.shape[:2]
    sigma = rng.uniform(0.5, 1.5)
    h = max(1, H//2)
    w = max(1, W//2)
    top = int(rng.integers(0, H-h+1))
    left = int(rng.integers(0, W-w+1))
    blurred = ndimage.gaussian_filter(photo, sigma=(sigma, sigma, 0.0))
    out = photo.copy()
    out[top:top+h, left:left+w] = blurred[top:top+h, left:left+w]
    return out


def sharpness_augment(photo, rng, **kwargs):
    """Random shift in sharpness: unsharp masking with a random (possibly negative) amount."""
    amount = rng.uniform(-1.0, 2.0)
    smooth = ndimage.gaussian_filter(photo, sigma=(1.0, 1.0, 0.0))
    out = photo+amount*(photo-smooth)
    return np.clip(out, 0.0, 1.0).astype(photo.dtype)


AUGMENTATIONS = {
    "structural" : structural_augment,
    "color" : color_augment,
    "blur" : blur_augment,
    "sharpness" : sharpness_augment
}


def augment(name, photo, rng, **kwargs):
    """Applies the named photo augmentation ("structural", "color", "blur" or "sharpness")."""
    try:
        function = AUGMENTATIONS[name]
    except KeyError:
        raise ValueError("{0} is not an allowable augmentation. Choose from {1}.".format(name, sorted(AUGMENTATIONS)))
    return function(photo, rng, **kwargs)


def _other_index(i, n, rng):
    # Uniform over {0, ..., n-1} without i
    j = int(rng.integers(n-1))
    return j+1 if j >= i else j


def sample_triplet_batch(dataset, batch_size, rng, **kwargs):
    """Samples a batch of labelled triplets.

    Parameters
    ----------
    dataset : SketchPhotoDataset
        Only labelled instances are used.

    batch_size : int
        Number of rows. Ignored when anchor_ids is given.

    rng : numpy.random.Generator

    anchor_ids : list of str, optional
        Anchor instances, one per row. Drawn uniformly when not given.

    augmentation : str, optional
        Name of the photo augmentation producing augmented_photo. Defaults to "structural".

    augment_rng : numpy.random.Generator, optional
        Generator driving the augmentation. Defaults to rng. Keeping it separate
        leaves the sampled ids independent of the augmentation chosen.

    Any further keyword arguments are passed to the augmentation.

    Returns
    -------
    TripletBatch

    Raises
    ------
    DatasetError
        If the dataset has fewer than two labelled instances.
    """

    anchor_ids = kwargs.pop("anchor_ids", None)
    augmentation = kwargs.pop("augmentation", "structural")
    augment_rng = kwargs.pop("augment_rng", rng)

    labelled = dataset.labelled
    n = len(labelled)
    if n < 2:
        raise DatasetError("Triplet sampling needs at least 2 labelled instances, got {0}.".format(n))
    index_of = {instance.instance_id : i for i, instance in enumerate(labelled)}

    if anchor_ids is None:
        anchor_rows = [int(i) for i in rng.integers(n, size=batch_size)]
    else:
        anchor_rows = [index_of[instance_id] for instance_id in anchor_ids]

    rows = {key : [] for key in ("anchor_sketch", "positive_photo", "negative_photo", "positive_sketch", "negative_sketch", "augmented_photo")}
    negative_ids = []
    anchor_sketch_index = []
    positive_sketch_index = []
    for i in anchor_rows:
        anchor = labelled[i]
        negative = labelled[_other_index(i, n, rng)]

        # Anchor sketch and a different sibling sketch where one exists
        n_sketches = len(anchor.sketches)
        a = int(rng.integers(n_sketches))
        p = _other_index(a, n_sketches, rng) if n_sketches > 1 else a

        rows["anchor_sketch"].append(anchor.sketches[a])
        rows["positive_photo"].append(anchor.photo)
        rows["negative_photo"].append(negative.photo)
        rows["positive_sketch"].append(anchor.sketches[p])
        rows["negative_sketch"].append(negative.sketches[int(rng.integers(len(negative.sketches)))])
        rows["augmented_photo"].append(augment(augmentation, anchor.photo, augment_rng, **kwargs))
        negative_ids.append(negative.instance_id)
        anchor_sketch_index.append(a)
        positive_sketch_index.append(p)

    return TripletBatch(anchor_ids=[labelled[i].instance_id for i in anchor_rows],
                        negative_ids=negative_ids,
                        anchor_sketch_index=anchor_sketch_index,
                        positive_sketch_index=positive_sketch_index,
                        **{key : np.stack(value, axis=0) for key, value in rows.items()})


def sample_photo_triplet_batch(photos, batch_size, rng, **kwargs):
    """Samples photo-only triplets (anchor, augmented anchor, other photo).

    Parameters
    ----------
    photos : dict
        Photos keyed by instance id.

    batch_size : int
        Number of rows. Ignored when anchor_ids is given.

    rng : numpy.random.Generator

    anchor_ids : list of str, optional
        Anchor photos, one per row. Drawn uniformly when not given.

    augmentation : str, optional
        Defaults to "structural".

    augment_rng : numpy.random.Generator, optional
        Generator driving the augmentation. Defaults to rng.

    Returns
    -------
    PhotoTripletBatch
    """

    anchor_ids = kwargs.pop("anchor_ids", None)
    augmentation = kwargs.pop("augmentation", "structural")
    augment_rng = kwargs.pop("augment_rng", rng)

    ids = sorted(photos)
    n = len(ids)
    if n < 2:
        raise DatasetError("Photo triplet sampling needs at least 2 photos, got {0}.".format(n))
    index_of = {instance_id : i for i, instance_id in enumerate(ids)}

    if anchor_ids is None:
        anchor_rows = [int(i) for i in rng.integers(n, size=batch_size)]
    else:
        anchor_rows = [index_of[instance_id] for instance_id in anchor_ids]

    anchors = []
    positives = []
    negatives = []
    negative_ids = []
    for i in anchor_rows:
        j = _other_index(i, n, rng)
        anchors.append(photos[ids[i]])
        positives.append(augment(augmentation, photos[ids[i]], augment_rng, **kwargs))
        negatives.append(photos[ids[j]])
        negative_ids.append(ids[j])

    return PhotoTripletBatch(anchor=np.stack(anchors, axis=0), positive=np.stack(positives, axis=0), negative=np.stack(negatives, axis=0),
                             anchor_ids=[ids[i] for i in anchor_rows], negative_ids=negative_ids)


def _read_image(filename, image_size):
    try:
        with Image.open(filename) as image:
            image = image.convert("RGB")
            if image.size != (image_size, image_size):
                image = image.resize((image_size, image_size), Image.BILINEAR)
            return np.asarray(image, dtype=np.float32)/255.0
    except (OSError, ValueError) as e:
        raise IOError("Cannot read image {0}: {1}".format(filename, e))


def load_directory(root, image_size, **kwargs):
    """Loads a dataset stored as

        root/<class_id>/photos/<instance_id>.png
        root/<class_id>/sketches/<instance_id>_<k>.png

    Photos without sketches become unlabelled instances.

    Parameters
    ----------
    root : str
        Dataset root directory.

    image_size : int
        Images are resized to image_size x image_size.

    orphan_sketches : str, optional
        How to handle a sketch whose instance id has no photo in its own class:
        "raise", "warn" (default) or "ignore". Skipped sketches are counted in the load report.

    Returns
    -------
    SketchPhotoDataset
        With its report member giving labelled, unlabelled and skipped counts.

    Raises
    ------
    IOError
        If the root is missing or an image cannot be read.

    DatasetError
        If an instance id appears under more than one class.
    """

    orphan_instruction = kwargs.get("orphan_sketches", "warn")

    if not os.path.isdir(root):
        raise IOError("Cannot find dataset directory {0}.".format(root))

    instances = {}
    sketch_files = []
    for class_id in sorted(os.listdir(root)):
        class_dir = os.path.join(root, class_id)
        if not os.path.isdir(class_dir):
            continue

        photo_dir = os.path.join(class_dir, "photos")
        if os.path.isdir(photo_dir):
            for filename in sorted(os.listdir(photo_dir)):
                if not filename.endswith(".png"):
                    continue
                instance_id = filename[:-len(".png")]
                if instance_id in instances:
                    raise DatasetError("Instance id '{0}' appears in classes '{1}' and '{2}'.".format(instance_id, instances[instance_id].class_id, class_id))
                instances[instance_id] = Instance(instance_id, class_id, _read_image(os.path.join(photo_dir, filename), image_size), [])

        sketch_dir = os.path.join(class_dir, "sketches")
        if os.path.isdir(sketch_dir):
            for filename in sorted(os.listdir(sketch_dir)):
                if filename.endswith(".png"):
                    sketch_files.append((class_id, os.path.join(sketch_dir, filename)))

    # Attach sketches in (instance, k) order
    skipped = 0
    attached = {}
    for class_id, filename in sketch_files:
        stem = os.path.basename(filename)[:-len(".png")]
        instance_id, _, k = stem.rpartition("_")
        if instance_id == "" or instance_id not in instances:
            skipped += 1
            handle_error(DatasetError("Sketch {0} has no matching photo id and was skipped.".format(filename)), orphan_instruction)
            continue
        if instances[instance_id].class_id != class_id:
            skipped += 1
            handle_error(DatasetError("Sketch {0} is filed under class '{1}' but photo '{2}' is in class '{3}'; skipped.".format(filename, class_id, instance_id, instances[instance_id].class_id)), orphan_instruction)
            continue
        try:
            k = int(k)
        except ValueError:
            pass
        attached.setdefault(instance_id, []).append((k, filename))

    for instance_id, entries in attached.items():
        entries.sort(key=lambda entry: (str(type(entry[0])), entry[0]))
        instances[instance_id].sketches = [_read_image(filename, image_size) for _, filename in entries]

    dataset = list(instances.values())
    n_labelled = sum(1 for instance in dataset if instance.is_labelled)
    report = LoadReport(labelled=n_labelled, unlabelled=len(dataset)-n_labelled, skipped=skipped)
    return SketchPhotoDataset(dataset, report=report)


def _to_png(image, filename):
    Image.fromarray(np.clip(np.round(image*255.0), 0, 255).astype(np.uint8), "RGB").save(filename)


def save_directory(dataset, root):
    """Writes the dataset in the directory format read by load_directory and returns its load report."""
    for instance in dataset.instances:
        photo_dir = os.path.join(root, instance.class_id, "photos")
        os.makedirs(photo_dir, exist_ok=True)
        _to_png(instance.photo, os.path.join(photo_dir, instance.instance_id+".png"))

        if instance.is_labelled:
            sketch_dir = os.path.join(root, instance.class_id, "sketches")
            os.makedirs(sketch_dir, exist_ok=True)
            for k, sketch in enumerate(instance.sketches):
                _to_png(sketch, os.path.join(sketch_dir, "{0}_{1}.png".format(instance.instance_id, k)))

    return dataset.report


def split_dataset(dataset, n_test, rng):
    """Holds out n_test labelled instances for evaluation.

    Returns
    -------
    train : SketchPhotoDataset
        Remaining labelled instances plus every unlabelled instance.

    test : SketchPhotoDataset
        The held-out labelled instances (the retrieval gallery).
    """
    labelled_ids = [instance.instance_id for instance in dataset.labelled]
    if n_test < 1 or n_test > len(labelled_ids)-2:
        raise DatasetError("Cannot hold out {0} of {1} labelled instances and keep 2 for training.".format(n_test, len(labelled_ids)))
    test_ids = set(rng.choice(labelled_ids, size=n_test, replace=False).tolist())
    train_ids = [instance.instance_id for instance in dataset.instances if instance.instance_id not in test_ids]
    return dataset.subset(train_ids), dataset.subset(sorted(test_ids))


def subsample_labelled(dataset, fraction, rng):
    """Keeps a fraction of the labelled instances; the unlabelled pool is unchanged."""
    if not 0.0 < fraction <= 1.0:
        raise DatasetError("Labelled fraction must lie in (0, 1], got {0}.".format(fraction))
    labelled_ids = [instance.instance_id for instance in dataset.labelled]
    n_keep = int(round(fraction*len(labelled_ids)))
    if n_keep < 2:
        raise DatasetError("Fraction {0} leaves {1} labelled instance(s); at least 2 are needed.".format(fraction, n_keep))
    if n_keep == len(labelled_ids):
        return dataset
    keep = set(rng.choice(labelled_ids, size=n_keep, replace=False).tolist())
    ids = [instance.instance_id for instance in dataset.instances if not instance.is_labelled or instance.instance_id in keep]
    return dataset.subset(ids)
