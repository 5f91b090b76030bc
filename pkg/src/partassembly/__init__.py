"""Single-view 3D part assembly at desk scale.

Given a set of unlabeled part point clouds and one rendered view of the
assembled object, predict a rigid 6-DoF pose per part so the posed union
reconstructs the object. Two modules do the work: a part-instance mask
network grounds each part in the image, and a two-stage graph network
regresses quaternion + translation poses.
"""

__version__ = "0.1.0"
