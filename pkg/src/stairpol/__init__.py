"""Staircase surface reconstruction from polarization imagery fused with depth.

Modules:
    polarimetry: Stokes parameters, degree/angle of polarization, zenith model.
    normal_fields: normals from polarization and depth, azimuth sign correction.
    integration: least-squares height from gradients.
    gwo: grey wolf optimizer with weighted leaders and Levy flight.
    registration: rigid transforms, ICP and joint camera calibration.
    pointcloud: plane segmentation and upstairs/downstairs classification.
    synth: synthetic scenes, sensors and fixtures.
    pipeline, cli: end-to-end runners and the ``stairpol`` command.
"""

__version__ = "0.1.0"
